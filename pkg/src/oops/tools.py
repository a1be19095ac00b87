"""Read-only repository tools exposed to the agents."""

from __future__ import annotations

import os
import re
from pathlib import Path

from .errors import ToolExecutionError
from .inventory import VCS_DIRS, enumerate_files, is_binary
from .llm import ToolSpec

MAX_READ_BYTES = 256 * 1024
MAX_SEARCH_RESULTS = 50

LIST_DIRECTORY = ToolSpec(
    "list_directory",
    "List the entries of a directory, relative to the project root. Directories end with '/'.",
    {
        "type": "object",
        "properties": {"path": {"type": "string", "description": "Directory relative to the project root; '.' for the root."}},
        "required": ["path"],
    },
)
READ_FILE = ToolSpec(
    "read_file",
    "Read a text file, given its path relative to the project root.",
    {
        "type": "object",
        "properties": {"path": {"type": "string"}},
        "required": ["path"],
    },
)
SEARCH_FILES = ToolSpec(
    "search_files",
    "Search text files for a regular expression. Returns matching lines as 'path:line: text'.",
    {
        "type": "object",
        "properties": {
            "pattern": {"type": "string"},
            "path": {"type": "string", "description": "Optional directory to restrict the search to."},
        },
        "required": ["pattern"],
    },
)
REPO_TOOLS = (LIST_DIRECTORY, READ_FILE, SEARCH_FILES)


class ToolHost:
    """Executes repository tools with every path confined to ``root``."""

    def __init__(self, root: str | os.PathLike, excludes=()):
        self.root = Path(root).resolve()
        self.excludes = tuple(excludes)

    def resolve(self, rel: str) -> Path:
        if not isinstance(rel, str):
            raise ToolExecutionError("path must be a string")
        rel = rel.strip() or "."
        if rel.startswith("/") or Path(rel).is_absolute():
            raise ToolExecutionError(f"{rel!r} is absolute; use a path relative to the project root")
        parts = rel.replace("\\", "/").split("/")
        if ".." in parts:
            raise ToolExecutionError(f"{rel!r} leaves the project root")
        if any(p in VCS_DIRS for p in parts):
            raise ToolExecutionError(f"{rel!r} is version-control metadata")
        target = (self.root / rel).resolve()
        if target != self.root and self.root not in target.parents:
            raise ToolExecutionError(f"{rel!r} resolves outside the project root")
        return target

    def execute(self, name: str, args: dict) -> str:
        if name == "list_directory":
            return self.list_directory(args.get("path", "."))
        if name == "read_file":
            return self.read_file(args.get("path", ""))
        if name == "search_files":
            return self.search_files(args.get("pattern", ""), args.get("path", "."))
        raise ToolExecutionError(f"unknown tool {name!r}")

    def list_directory(self, path: str = ".") -> str:
        target = self.resolve(path)
        if not target.is_dir():
            raise ToolExecutionError(f"{path!r} is not a directory")
        lines = []
        for entry in sorted(target.iterdir(), key=lambda p: p.name):
            if entry.is_symlink() or entry.name in VCS_DIRS:
                continue
            lines.append(entry.name + "/" if entry.is_dir() else entry.name)
        return "\n".join(lines) if lines else "(empty directory)"

    def read_file(self, path: str) -> str:
        target = self.resolve(path)
        if target.is_symlink() or not target.is_file():
            raise ToolExecutionError(f"{path!r} does not exist or is not a regular file")
        if is_binary(target):
            raise ToolExecutionError(f"{path!r} is a binary file")
        data = target.read_bytes()
        text = data[:MAX_READ_BYTES].decode("utf-8", errors="replace")
        if len(data) > MAX_READ_BYTES:
            text += f"\n[truncated after {MAX_READ_BYTES} bytes]"
        return text

    def search_files(self, pattern: str, path: str = ".") -> str:
        if not pattern:
            raise ToolExecutionError("empty search pattern")
        try:
            regex = re.compile(pattern)
        except re.error:
            regex = re.compile(re.escape(pattern))
        base = self.resolve(path)
        if not base.is_dir():
            raise ToolExecutionError(f"{path!r} is not a directory")
        hits = []
        prefix = base.relative_to(self.root).as_posix()
        for f in enumerate_files(base, self.excludes):
            if f.is_binary:
                continue
            rel = f.rel_path if prefix == "." else f"{prefix}/{f.rel_path}"
            for lineno, line in enumerate(f.content.splitlines(), 1):
                if regex.search(line):
                    hits.append(f"{rel}:{lineno}: {line.strip()[:200]}")
                    if len(hits) >= MAX_SEARCH_RESULTS:
                        hits.append("[more results omitted]")
                        return "\n".join(hits)
        return "\n".join(hits) if hits else "(no matches)"

    def is_repo_file(self, rel: str) -> bool:
        try:
            target = self.resolve(rel)
        except ToolExecutionError:
            return False
        return target.is_file() and not target.is_symlink()
