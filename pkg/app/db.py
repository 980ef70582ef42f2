import logging
from contextlib import contextmanager
from typing import Dict

from sqlalchemy import create_engine
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from app.exceptions import MeshError, VolumeDecryptionError
from app.models import Base, VolumeKey
from config import KV_STORE_URL

logger = logging.getLogger(__name__)


class KeyValueStore:
    """
    Key-value store control plane владельца. У каждого mesh свой движок:
    in-memory sqlite по умолчанию, поэтому прогоны не делят состояние.
    """

    def __init__(self, url: str = KV_STORE_URL):
        kwargs = {}
        if url.startswith("sqlite"):
            # одно соединение на весь in-memory store
            kwargs = {"connect_args": {"check_same_thread": False}, "poolclass": StaticPool}
        self.engine = create_engine(url, **kwargs)
        Base.metadata.create_all(bind=self.engine)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)

    @contextmanager
    def session(self):
        db = self.SessionLocal()
        try:
            yield db
            db.commit()
        except Exception:
            db.rollback()
            raise
        finally:
            db.close()

    def put(self, key_id: str, owner: str, material: bytes):
        try:
            with self.session() as db:
                db.add(VolumeKey(key_id=key_id, owner=owner, material=material))
        except IntegrityError as e:
            raise MeshError(f"ключ {key_id} уже существует") from e

    def get(self, key_id: str) -> bytes:
        with self.session() as db:
            row = db.query(VolumeKey).filter(VolumeKey.key_id == key_id).first()
            if row is None:
                raise VolumeDecryptionError(f"ключ {key_id} не найден")
            if row.revoked:
                raise VolumeDecryptionError(f"ключ {key_id} отозван")
            return bytes(row.material)

    def revoke(self, key_id: str) -> bool:
        """True, если ключ был активен. Повторный отзыв ничего не меняет."""
        with self.session() as db:
            row = db.query(VolumeKey).filter(VolumeKey.key_id == key_id).first()
            if row is None or row.revoked:
                return False
            row.revoked = True
        logger.info(f"Ключ тома {key_id} отозван")
        return True

    def entries(self) -> Dict[str, bytes]:
        with self.session() as db:
            rows = db.query(VolumeKey).filter(VolumeKey.revoked.is_(False)).order_by(VolumeKey.id).all()
            return {row.key_id: bytes(row.material) for row in rows}

    def __len__(self) -> int:
        with self.session() as db:
            return db.query(VolumeKey).count()

    def dispose(self):
        self.engine.dispose()
