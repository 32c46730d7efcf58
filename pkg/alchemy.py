import json
import os
from datetime import datetime

from sqlalchemy import Column, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from logging_setup import get_logger
from settings import get_settings

logger = get_logger(__name__)

Base = declarative_base()
Session = sessionmaker()
_engine = None


class RunRecord(Base):
    __tablename__ = "runs"

    run_id = Column(Integer, primary_key=True)
    command = Column(String, nullable=False)
    config_digest = Column(String, nullable=False)
    problem_id = Column(String)
    exit_code = Column(Integer, nullable=False)
    summary = Column(Text)
    created_date = Column(String, nullable=False)

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config_digest": self.config_digest,
            "problem_id": self.problem_id,
            "exit_code": self.exit_code,
            "summary": json.loads(self.summary) if self.summary else None,
            "created_date": self.created_date,
        }


def _ensure_sqlite_dir(db_url):
    prefix = "sqlite:///"
    if db_url.startswith(prefix):
        directory = os.path.dirname(db_url[len(prefix):])
        if directory:
            os.makedirs(directory, exist_ok=True)


def init_db(db_url=None):
    """Bind the session factory and create the runs table if it doesn't exist"""
    global _engine
    db_url = db_url or get_settings().db_url
    try:
        _ensure_sqlite_dir(db_url)
        _engine = create_engine(db_url)
        Session.configure(bind=_engine)
        Base.metadata.create_all(_engine)
        logger.info(f"Run archive initialized at {db_url}")
    except Exception as e:
        logger.error(f"Error initializing run archive: {e}")
        raise


def _session():
    if _engine is None:
        init_db()
    return Session()


def record_run(command, config_digest, problem_id, exit_code, summary=None):
    """Archive one CLI invocation and return its ID"""
    try:
        session = _session()
        record = RunRecord(
            command=command,
            config_digest=config_digest,
            problem_id=problem_id,
            exit_code=exit_code,
            summary=json.dumps(summary, sort_keys=True) if summary is not None else None,
            created_date=datetime.now().isoformat(),
        )
        session.add(record)
        session.commit()
        run_id = record.run_id
        session.close()
        logger.info(f"Archived {command} run {run_id} (exit {exit_code})")
        return run_id
    except Exception as e:
        logger.error(f"Error archiving run: {e}")
        raise


def get_run(run_id):
    """Retrieve a specific run by ID"""
    try:
        session = _session()
        run = session.query(RunRecord).filter_by(run_id=run_id).first()
        session.close()
        return run
    except Exception as e:
        logger.error(f"Error retrieving run: {e}")
        raise


def get_runs_for_problem(problem_id):
    """Retrieve all runs of one problem, newest first"""
    try:
        session = _session()
        runs = (
            session.query(RunRecord)
            .filter(RunRecord.problem_id == problem_id)
            .order_by(RunRecord.run_id.desc())
            .all()
        )
        session.close()
        return runs
    except Exception as e:
        logger.error(f"Error retrieving runs for {problem_id}: {e}")
        raise


def delete_runs(run_ids):
    """Delete multiple runs by their IDs"""
    try:
        session = _session()
        session.query(RunRecord).filter(RunRecord.run_id.in_(run_ids)).delete(
            synchronize_session=False
        )
        session.commit()
        session.close()
        logger.info(f"Deleted runs: {run_ids}")
    except Exception as e:
        logger.error(f"Error deleting runs: {e}")
        raise
