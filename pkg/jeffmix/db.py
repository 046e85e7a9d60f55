import json
import logging
from pathlib import Path
from threading import Lock
from typing import Iterator, Optional, Union

import numpy as np
from sqlalchemy import Column, Integer, String, Text, UniqueConstraint, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker
from sqlalchemy.pool import StaticPool

from .fisher import FisherCache, FisherMatrix
from .jeffmix import APP_DIRS

logger = logging.getLogger(__name__)

DEFAULT_DB_PATH = Path(APP_DIRS.user_cache_dir) / "fisher.sqlite"

Base = declarative_base()


class DBFisherMatrix(Base):  # type: ignore
    __tablename__ = "fisher_matrices"

    id = Column(Integer, primary_key=True)
    key = Column(String(64), nullable=False)
    labels = Column(Text, nullable=False)
    entries = Column(Text, nullable=False)

    __table_args__ = (UniqueConstraint("key", name="fisher_key_unique_constraint"),)

    @classmethod
    def from_fisher(cls, key: str, fisher: FisherMatrix) -> "DBFisherMatrix":
        # repr round-trips doubles exactly
        return cls(
            key=key,
            labels=json.dumps(list(fisher.labels)),
            entries=json.dumps([[repr(float(v)) for v in row] for row in fisher.entries]),
        )

    def to_fisher(self) -> FisherMatrix:
        entries = np.array([[float(v) for v in row] for row in json.loads(self.entries)])
        return FisherMatrix(tuple(json.loads(self.labels)), entries)


class DBFisherCache(FisherCache):
    def __init__(self, db: Union[str, Path] = ":memory:"):
        super().__init__()
        if db == ":memory:":
            db = "sqlite:///:memory:"
        elif db == "sqlite:///:memory:":
            pass
        elif isinstance(db, str):
            if db.startswith("sqlite:///"):
                db = db[len("sqlite:///") :]
            db = Path(db)
        if isinstance(db, Path):
            db.parent.mkdir(parents=True, exist_ok=True)
            db = f"sqlite:///{db.absolute()!s}?check_same_thread=False"
        self.db: str = db
        self._session = None
        self._lock = Lock()

    def open(self):
        if self.db == "sqlite:///:memory:":
            # one connection shared by every thread
            engine = create_engine(
                self.db, connect_args={"check_same_thread": False}, poolclass=StaticPool
            )
        else:
            engine = create_engine(self.db)
        Base.metadata.create_all(engine)
        self._session = sessionmaker(bind=engine)()

    def close(self):
        if self._session is not None:
            self._session.close()
        self._session = None

    @property
    def session(self):
        if self._session is None:
            raise ValueError("the Fisher cache must be opened (`with cache:`) before use")
        return self._session

    def __len__(self):
        with self._lock:
            return self.session.query(DBFisherMatrix).count()

    def __iter__(self) -> Iterator[str]:
        with self._lock:
            keys = [row.key for row in self.session.query(DBFisherMatrix.key).all()]
        yield from keys

    def get(self, key: str) -> Optional[FisherMatrix]:
        with self._lock:
            row = self.session.query(DBFisherMatrix).filter_by(key=key).first()
            if row is None:
                return None
            return row.to_fisher()

    def put(self, key: str, fisher: FisherMatrix):
        with self._lock:
            if self.session.query(DBFisherMatrix).filter_by(key=key).first() is not None:
                logger.debug(f"Fisher matrix {key} is already cached")
                return
            self.session.add(DBFisherMatrix.from_fisher(key, fisher))
            self.session.commit()
