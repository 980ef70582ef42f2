import base64
import binascii

import config
from app.exceptions import CredentialParseError


def parse_credential(authorization_header: str) -> str:
    """
    Извлекает имя пользователя из заголовка Authorization:
    '<scheme> <base64(user:password)>' -> 'user'.
    Принимает и base64url, и стандартный алфавит base64.
    """
    scheme, sep, encoded = (authorization_header or "").partition(" ")
    if not sep or not encoded.strip():
        raise CredentialParseError("в заголовке Authorization нет токена")

    token = encoded.strip().replace("-", "+").replace("_", "/")
    token += "=" * (-len(token) % 4)
    try:
        plaintext = base64.b64decode(token, validate=True).decode("utf-8")
    except (binascii.Error, ValueError) as e:
        raise CredentialParseError(f"некорректный base64 в Authorization: {e}") from e

    user, colon, _ = plaintext.partition(":")
    if not colon:
        raise CredentialParseError("в учётных данных нет ':'")
    if not user:
        raise CredentialParseError("пустое имя пользователя")
    return user


def basic_credentials(user: str, password: str = config.DEFAULT_PASSWORD) -> str:
    """Заголовок Authorization, который сервис агента отправляет со своим запросом."""
    raw = f"{user}:{password}".encode("utf-8")
    return "Basic " + base64.urlsafe_b64encode(raw).decode("ascii")

