"""Open Network Handle System: self-assigned cryptographic handles.

A handle's apex label embeds a hash of its owner's public key, so the
name itself says which key may update it. The package provides the
authoritative server, a verifying resolver client that re-checks every
served answer from its signed evidence, and a command line front end.
"""

from .client import (
    HandleReference,
    UpgradeReport,
    VerifiedResolution,
    cancel_old_key,
    key_upgrade,
    resolve_and_verify,
    update_reference,
    verify_resolution,
)
from .crypto import (
    PublicKey,
    RecordSignature,
    RSA_SHA1,
    RSA_SHA256,
    SecretKey,
    SignatureParams,
    derive_pk_label,
    generate_keypair,
    load_public_key,
    load_secret_key,
    save_public_key,
    save_secret_key,
    sign_rrset,
    verify_key_matches_label,
    verify_rrset,
)
from .errors import (
    CryptoError,
    DelegationLoopError,
    DepthExceededError,
    FrameTooLargeError,
    HandleStructureError,
    InvalidLabelError,
    MalformedFrameError,
    NotUnderRootError,
    OnhsError,
    RecordError,
    ResolutionError,
    VerificationError,
    WireError,
    ZoneSyntaxError,
)
from .handles import (
    Handle,
    HandleLabel,
    parse_handle,
    parse_handle_guess_root,
    parse_label,
)
from .records import (
    ResourceRecord,
    SignedRRset,
    SoaData,
    ZoneSnapshot,
    build_nxt_chain,
    parse_zone,
    serialize_zone,
)
from .server import (
    HandleServer,
    Resolution,
    UpdateMessage,
    Verdict,
    make_assign,
    make_cancel,
    make_claim,
    make_compromise,
    make_create_child,
    make_delegate,
    make_transfer,
)
from .service import HandleService, RemoteEndpoint, ServerConfig, TcpHandleServer

__version__ = "0.1.0"

__all__ = [
    "CryptoError",
    "DelegationLoopError",
    "DepthExceededError",
    "FrameTooLargeError",
    "Handle",
    "HandleLabel",
    "HandleReference",
    "HandleServer",
    "HandleService",
    "HandleStructureError",
    "InvalidLabelError",
    "MalformedFrameError",
    "NotUnderRootError",
    "OnhsError",
    "PublicKey",
    "RecordError",
    "RecordSignature",
    "RemoteEndpoint",
    "Resolution",
    "ResolutionError",
    "ResourceRecord",
    "RSA_SHA1",
    "RSA_SHA256",
    "SecretKey",
    "ServerConfig",
    "SignatureParams",
    "SignedRRset",
    "SoaData",
    "TcpHandleServer",
    "UpdateMessage",
    "UpgradeReport",
    "VerificationError",
    "Verdict",
    "VerifiedResolution",
    "WireError",
    "ZoneSnapshot",
    "ZoneSyntaxError",
    "build_nxt_chain",
    "cancel_old_key",
    "derive_pk_label",
    "generate_keypair",
    "key_upgrade",
    "load_public_key",
    "load_secret_key",
    "make_assign",
    "make_cancel",
    "make_claim",
    "make_compromise",
    "make_create_child",
    "make_delegate",
    "make_transfer",
    "parse_handle",
    "parse_handle_guess_root",
    "parse_label",
    "parse_zone",
    "resolve_and_verify",
    "save_public_key",
    "save_secret_key",
    "serialize_zone",
    "sign_rrset",
    "update_reference",
    "verify_key_matches_label",
    "verify_resolution",
    "verify_rrset",
]
