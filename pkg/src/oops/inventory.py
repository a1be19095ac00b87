"""Repository walking, binary detection and path-only pre-filtering."""

from __future__ import annotations

import fnmatch
import functools
import os
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable, Iterator

from .errors import FATAL_ERRORS, AgentError, InventoryError
from .llm import Gateway, ask_structured, user

BINARY_SNIFF_BYTES = 8192
VCS_DIRS = frozenset({".git", ".hg", ".svn", ".bzr", "_darcs", ".fossil", "CVS"})
MAX_DETECTION_BYTES = 256 * 1024
CHUNK_OVERLAP_LINES = 200


@dataclass(frozen=True)
class RepoFile:
    rel_path: str
    abs_path: Path = field(compare=False, repr=False)
    size_bytes: int = 0
    is_binary: bool = False

    @functools.cached_property
    def content(self) -> str:
        if self.is_binary:
            raise ValueError(f"refusing to load binary file {self.rel_path}")
        return self.abs_path.read_text(encoding="utf-8", errors="replace")


def is_binary_bytes(head: bytes) -> bool:
    return b"\x00" in head[:BINARY_SNIFF_BYTES]


def is_binary(file: RepoFile | str | os.PathLike) -> bool:
    """True iff a NUL byte occurs among the first 8192 bytes."""
    path = file.abs_path if isinstance(file, RepoFile) else Path(file)
    try:
        with open(path, "rb") as fh:
            return is_binary_bytes(fh.read(BINARY_SNIFF_BYTES))
    except OSError as exc:
        raise InventoryError(f"cannot read {path}: {exc}") from exc


def _excluded(rel_path: str, excludes: Iterable[str]) -> bool:
    parts = rel_path.split("/")
    prefixes = ["/".join(parts[: i + 1]) for i in range(len(parts))]
    for pattern in excludes:
        pattern = pattern.strip("/")
        if any(fnmatch.fnmatchcase(p, pattern) for p in prefixes):
            return True
        if "/" not in pattern and any(fnmatch.fnmatchcase(part, pattern) for part in parts):
            return True
    return False


def enumerate_files(root: str | os.PathLike, excludes: Iterable[str] = ()) -> list[RepoFile]:
    """All regular files under ``root`` in lexicographic ``rel_path`` order.

    Symlinks are neither followed nor listed and version-control metadata
    directories are skipped. ``excludes`` are glob patterns matched against
    the relative path and each of its parent directories.
    """
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise InventoryError(f"repository root {root} is not a readable directory")
    excludes = tuple(excludes)
    files: list[RepoFile] = []

    def onerror(exc: OSError):
        raise InventoryError(f"cannot walk {exc.filename}: {exc}") from exc

    for dirpath, dirnames, filenames in os.walk(root, followlinks=False, onerror=onerror):
        base = Path(dirpath)
        dirnames[:] = [d for d in dirnames if d not in VCS_DIRS and not (base / d).is_symlink()]
        for name in filenames:
            path = base / name
            if path.is_symlink() or not path.is_file():
                continue
            rel = path.relative_to(root).as_posix()
            if excludes and _excluded(rel, excludes):
                continue
            files.append(RepoFile(rel, path, path.stat().st_size, is_binary(path)))
    files.sort(key=lambda f: f.rel_path)
    return files


def split_for_detection(
    text: str, max_bytes: int = MAX_DETECTION_BYTES, overlap_lines: int = CHUNK_OVERLAP_LINES
) -> list[str]:
    """Split oversized text into line-aligned chunks that overlap."""
    if len(text.encode("utf-8")) <= max_bytes:
        return [text]
    lines = text.splitlines(keepends=True)
    chunks: list[str] = []
    start = 0
    while start < len(lines):
        size = 0
        end = start
        while end < len(lines) and (end == start or size + len(lines[end].encode("utf-8")) <= max_bytes):
            size += len(lines[end].encode("utf-8"))
            end += 1
        chunks.append("".join(lines[start:end]))
        if end >= len(lines):
            break
        start = max(end - overlap_lines, start + 1)
    return chunks


def canonical_rel_path(path: str) -> str | None:
    """Return ``path`` if it is a canonical root-relative POSIX path."""
    if not path or "\\" in path or path.startswith("/") or PurePosixPath(path).is_absolute():
        return None
    parts = path.split("/")
    if any(p in ("", ".", "..") for p in parts):
        return None
    if len(path) > 1 and path[1] == ":":  # drive letter
        return None
    return path


# --- pre-filter ------------------------------------------------------------------

FILTER_SCHEMA = {
    "type": "object",
    "properties": {
        "result": {"type": "boolean", "description": "true if the file might define REST API endpoints"},
        "reasoning": {"type": "string"},
    },
    "required": ["result", "reasoning"],
}

FILTER_PROMPT = (
    "You need to analyze whether file {file} might contain definitions of REST API endpoints, "
    "rather than only configuration, tests, static assets, documentation or other supporting code. "
    "Judge from the path alone; the content is not provided.\n\n"
    'Use the output tool to output your result ("true" or "false"), along with the reasoning behind your judgment.'
)


def may_contain_api_entries(file: RepoFile, gateway: Gateway, preamble: str, *, stage: str = "file_filter") -> tuple[bool, str]:
    """Ask the model whether ``file`` may hold route definitions.

    Only the path goes into the prompt. Output that stays invalid after one
    corrective re-ask counts as "yes": the filter only exists to save tokens.
    """
    if file.is_binary:
        return False, "binary file"
    request = gateway.request(preamble, [user(FILTER_PROMPT.format(file=file.rel_path))], output_schema=FILTER_SCHEMA)
    try:
        args, _ = ask_structured(gateway, request, check_schema=_LENIENT_FILTER, max_rounds=2, stage=stage)
    except FATAL_ERRORS:
        raise
    except AgentError as exc:
        return True, f"filter output unusable, keeping file ({exc})"
    verdict = _as_bool(args.get("result"))
    if verdict is None:
        return True, "filter output unusable, keeping file"
    return verdict, str(args.get("reasoning", ""))


# accepts the string spellings the prompt itself mentions
_LENIENT_FILTER = {
    "type": "object",
    "properties": {"result": {"anyOf": [{"type": "boolean"}, {"enum": ["true", "false", "True", "False"]}]}},
    "required": ["result"],
}


def _as_bool(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    return None


def iter_text_files(files: Iterable[RepoFile]) -> Iterator[RepoFile]:
    return (f for f in files if not f.is_binary)
