from sqlalchemy import Boolean, CheckConstraint, Column, Integer, LargeBinary, String
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class VolumeKey(Base):
    """Ключ шифрования persistent volume агента в key-value store оркестратора."""
    __tablename__ = "volume_keys"

    id = Column(Integer, primary_key=True, index=True)
    key_id = Column(String(100), unique=True, index=True, nullable=False)
    owner = Column(String(100), nullable=False)  # агент-владелец тома
    material = Column(LargeBinary, nullable=False)
    revoked = Column(Boolean, default=False, nullable=False)

    __table_args__ = (
        CheckConstraint('length(key_id) >= 1', name='check_key_id_length'),
        CheckConstraint('length(material) = 32', name='check_key_size'),
    )
