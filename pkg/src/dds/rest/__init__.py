"""REST service: submission, monitoring, cache, catalog, control."""

from dds.rest.app import build_app
from dds.rest.auth import AuthError, AuthToken, authenticate, mint_token, verify_token

__all__ = ["build_app", "AuthToken", "AuthError", "mint_token", "verify_token", "authenticate"]
