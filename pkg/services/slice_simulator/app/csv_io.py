from __future__ import annotations

import csv
import io
import os
from typing import Any, Iterable, Sequence

import aiofiles
import aiofiles.os

from .retry import io_retry


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Header first, comma separated, quoting only where a field needs it."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


@io_retry()
async def write_text(path: str, text: str) -> None:
    """Write via a temp file and rename so readers never see a partial CSV."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    try:
        async with aiofiles.open(tmp, "w", encoding="utf-8", newline="") as f:
            await f.write(text)
        await aiofiles.os.replace(tmp, path)
    finally:
        if await aiofiles.os.path.exists(tmp):
            await aiofiles.os.remove(tmp)


async def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    rows = list(rows)
    await write_text(path, render_csv(header, rows))
    return len(rows)
