import math
import typing as t
from tempfile import SpooledTemporaryFile

import numpy as np

from ellar_jva.constants import IN_MEMORY_FILESIZE, REAL_FORMAT


def get_content_file_obj(content: bytes) -> "SpooledTemporaryFile[bytes]":
    f = SpooledTemporaryFile(IN_MEMORY_FILESIZE)
    f.write(content)
    f.seek(0)
    return f


def format_real(value: float) -> str:
    """Six significant digits, trailing zeros kept: 40 -> '40.0000'."""
    if not math.isfinite(value):
        raise ValueError(f"cannot render non-finite value {value!r}")
    rendered = REAL_FORMAT.format(value)
    if rendered.startswith("-") and float(rendered) == 0.0:
        rendered = rendered[1:]
    return rendered


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def derive_seed(*parts: t.Union[int, str]) -> int:
    """Stable sub-seed for a named random stream."""
    seq = np.random.SeedSequence([_seed_part(part) for part in parts])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _seed_part(part: t.Union[int, str]) -> int:
    if isinstance(part, int):
        return part & 0xFFFFFFFF
    return int.from_bytes(part.encode(), "little") % (2**32)
