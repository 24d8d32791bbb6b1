"""
Utility-Funktionen für Dateioperationen und Verzeichnisverwaltung
"""

import os
import tempfile
from contextlib import contextmanager
from typing import Iterator

WORKING_DIR_ENV = "IMLS_WORKING_DIR"


def get_working_dir() -> str:
    """Ermittelt das Working Directory"""
    # Aus Umgebungsvariable oder aktuelles Verzeichnis
    working_dir = os.environ.get(WORKING_DIR_ENV, os.getcwd())
    os.makedirs(working_dir, exist_ok=True)
    return working_dir


def create_tmp_dir_if_needed() -> str:
    """Erstellt das Ausgabeverzeichnis <working dir>/tmp, falls nötig"""
    tmp_dir = os.path.join(get_working_dir(), "tmp")
    os.makedirs(tmp_dir, exist_ok=True)
    return tmp_dir


def resolve_path(path: str) -> str:
    """Relative Pfade beziehen sich auf das Working Directory."""
    if os.path.isabs(path):
        return path
    return os.path.join(get_working_dir(), path)


@contextmanager
def atomic_write(path: str) -> Iterator[str]:
    """Liefert einen temporären Pfad im Zielverzeichnis; erst nach Erfolg wird umbenannt.

    Bei einer Ausnahme bleibt eine bestehende Zieldatei unverändert.
    """
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise OSError(f"output directory does not exist: {directory}")
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", suffix=os.path.splitext(path)[1], dir=directory)
    os.close(fd)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
