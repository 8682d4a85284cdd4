import logging
import os
import uuid
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from sqlalchemy import JSON, Column, DateTime, Float, Integer, String, create_engine
from sqlalchemy.engine import make_url
from sqlalchemy.orm import declarative_base, sessionmaker

from .config import config

logger = logging.getLogger(__name__)

Base = declarative_base()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class RunRecord(Base):
    __tablename__ = "run_records"
    id = Column(String, primary_key=True)
    created_at = Column(DateTime, default=_utcnow)
    subcommand = Column(String, index=True)
    config = Column(JSON)
    summary = Column(JSON)
    exit_code = Column(Integer)
    status = Column(String)


class CounterexampleRecord(Base):
    __tablename__ = "counterexamples"
    id = Column(String, primary_key=True)
    run_id = Column(String, index=True)
    seed = Column(Integer)
    trial = Column(Integer)
    lhs = Column(Float)
    rhs = Column(Float)
    margin = Column(Float)


class Database:
    def __init__(self, url: Optional[str] = None):
        url = make_url(url or config.audit.database_url)
        if url.get_backend_name() == "sqlite" and url.database not in (None, "", ":memory:"):
            os.makedirs(os.path.dirname(os.path.abspath(url.database)), exist_ok=True)
        self.engine = create_engine(url)
        self.Session = sessionmaker(bind=self.engine)
        self._init_db()

    def _init_db(self):
        """Create tables if they don't exist."""
        Base.metadata.create_all(self.engine)

    def log_run(
        self, subcommand: str, run_config: Dict[str, Any], summary: Dict[str, Any], exit_code: int
    ) -> Optional[str]:
        """Record one CLI run; returns its id, or None when the write failed."""
        run_id = str(uuid.uuid4())
        session = self.Session()
        try:
            session.add(
                RunRecord(
                    id=run_id,
                    subcommand=subcommand,
                    config=run_config,
                    summary=summary,
                    exit_code=exit_code,
                    status="success" if exit_code == 0 else "failed",
                )
            )
            session.commit()
            return run_id
        except Exception as e:
            session.rollback()
            logger.error("Failed to write run record: %s", e)
            return None
        finally:
            session.close()

    def log_counterexample(self, run_id: str, seed: int, trial: int, lhs: float, rhs: float):
        session = self.Session()
        try:
            session.add(
                CounterexampleRecord(
                    id=str(uuid.uuid4()), run_id=run_id, seed=seed, trial=trial, lhs=lhs, rhs=rhs, margin=lhs - rhs
                )
            )
            session.commit()
        except Exception as e:
            session.rollback()
            logger.error("Failed to write counterexample: %s", e)
        finally:
            session.close()

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        session = self.Session()
        try:
            run = session.query(RunRecord).filter_by(id=run_id).first()
            if run:
                return {
                    "id": run.id,
                    "created_at": run.created_at,
                    "subcommand": run.subcommand,
                    "config": run.config,
                    "summary": run.summary,
                    "exit_code": run.exit_code,
                    "status": run.status,
                }
            return None
        finally:
            session.close()

    def list_counterexamples(self, run_id: str) -> List[Dict[str, Any]]:
        session = self.Session()
        try:
            records = session.query(CounterexampleRecord).filter_by(run_id=run_id).order_by(CounterexampleRecord.trial)
            return [
                {"seed": r.seed, "trial": r.trial, "lhs": r.lhs, "rhs": r.rhs, "margin": r.margin} for r in records
            ]
        finally:
            session.close()


def open_audit_store(url: Optional[str] = None) -> Optional[Database]:
    """The audit store named by url, or by config when enabled there; None when auditing is off."""
    if url is None and not config.audit.enabled:
        return None
    try:
        return Database(url)
    except Exception as e:
        logger.error("Audit store unavailable: %s", e)
        return None
