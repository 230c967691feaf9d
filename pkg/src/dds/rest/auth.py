"""Locally signed bearer tokens carrying (subject, groups, expiry).

Format: base64url(JSON claims) + "." + hex HMAC-SHA256 over the encoded
claims. Constant-time signature comparison; expired or tampered tokens are
rejected before any routing happens.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import time
from dataclasses import dataclass

from dds.config import AuthConfig


@dataclass(frozen=True)
class AuthToken:
    subject: str
    groups: tuple[str, ...]
    expiry: float  # epoch seconds


class AuthError(Exception):
    pass


def mint_token(auth: AuthConfig, subject: str, groups: list[str],
               ttl: float | None = None) -> str:
    claims = {
        "sub": subject,
        "groups": list(groups),
        "exp": time.time() + (ttl if ttl is not None else auth.token_ttl),
    }
    encoded = base64.urlsafe_b64encode(json.dumps(claims).encode()).decode().rstrip("=")
    signature = hmac.new(auth.secret.encode(), encoded.encode(), hashlib.sha256).hexdigest()
    return f"{encoded}.{signature}"


def verify_token(auth: AuthConfig, token: str) -> AuthToken:
    try:
        encoded, signature = token.rsplit(".", 1)
    except ValueError as exc:
        raise AuthError("malformed token") from exc
    expected = hmac.new(auth.secret.encode(), encoded.encode(), hashlib.sha256).hexdigest()
    if not hmac.compare_digest(signature, expected):
        raise AuthError("bad signature")
    padded = encoded + "=" * (-len(encoded) % 4)
    try:
        claims = json.loads(base64.urlsafe_b64decode(padded))
    except (ValueError, json.JSONDecodeError) as exc:
        raise AuthError("malformed claims") from exc
    if claims.get("exp", 0) < time.time():
        raise AuthError("token expired")
    return AuthToken(subject=claims.get("sub", ""),
                     groups=tuple(claims.get("groups", ())),
                     expiry=claims["exp"])


def authenticate(auth: AuthConfig, username: str, password: str) -> str:
    for user in auth.users:
        if user.username == username and hmac.compare_digest(user.password, password):
            return mint_token(auth, username, user.groups)
    raise AuthError("unknown user or wrong password")
