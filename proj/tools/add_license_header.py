#!/usr/bin/env python3
# Copyright 2026 The ResT Kit Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Prepends the Apache-2.0 header to project sources that lack it.

Usage: add_license_header.py HEADER_FILE [ROOT]

HEADER_FILE holds the header as // comment lines. C++ files get it verbatim;
CMake, TOML and Python files get the same text with # comments. A file that
already starts with the header (after any shebang) is left alone, so reruns
are no-ops.
"""

import pathlib
import sys

SOURCE_DIRS = ("src", "include", "tests", "tools", "python")
CPP_SUFFIXES = {".cpp", ".hpp", ".h"}
HASH_SUFFIXES = {".py", ".toml"}


def hash_comment(header: str) -> str:
    lines = []
    for line in header.splitlines():
        body = line[2:] if line.startswith("//") else line
        lines.append("#" + body if body else "#")
    return "\n".join(lines) + "\n"


def targets(root: pathlib.Path):
    for name in ("CMakeLists.txt", "pyproject.toml"):
        if (root / name).is_file():
            yield root / name
    for d in SOURCE_DIRS:
        for path in sorted((root / d).rglob("*")):
            if not path.is_file() or "__pycache__" in path.parts:
                continue
            if path.suffix in CPP_SUFFIXES | HASH_SUFFIXES or path.name == "CMakeLists.txt":
                yield path


def main() -> int:
    if len(sys.argv) not in (2, 3):
        print(__doc__.strip().splitlines()[2], file=sys.stderr)
        return 1
    header = pathlib.Path(sys.argv[1]).read_text().rstrip("\n") + "\n"
    root = pathlib.Path(sys.argv[2] if len(sys.argv) == 3 else ".").resolve()
    hashed = hash_comment(header)
    changed = 0
    for path in targets(root):
        text = path.read_text()
        block = header if path.suffix in CPP_SUFFIXES else hashed
        shebang = ""
        if text.startswith("#!"):
            line, _, text = text.partition("\n")
            shebang = line + "\n"
        if text.startswith(block):
            continue
        text = shebang + block + "\n" + text
        path.write_text(text)
        changed += 1
        print(f"added header: {path.relative_to(root)}")
    print(f"{changed} file(s) updated")
    return 0


if __name__ == "__main__":
    sys.exit(main())
