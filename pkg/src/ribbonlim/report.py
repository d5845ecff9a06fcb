import sys
from typing import Iterable, Sequence, TextIO

import numpy as np

from ribbonlim.frames import Directors
from ribbonlim.surface import RibbonMesh


def format_number(value: object) -> str:
    """17 significant digits for floats, negative zero written as 0."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    number = float(value)  # type: ignore[arg-type]
    if number == 0.0:
        number = 0.0
    return f"{number:.17g}"


class _TextTarget:
    """A text file opened on `__enter__`, or stdout for the path `-`."""

    def __init__(self, path: str):
        self.path = path
        self.stream: TextIO | None = None
        self._owned = False

    def _require(self, name: str) -> TextIO:
        if self.stream is None:
            raise RuntimeError(f"{name} must be used within a 'with' statement.")
        return self.stream

    def __enter__(self):
        if self.path == "-":
            self.stream = sys.stdout
        else:
            self.stream = open(self.path, mode="w", encoding="utf-8", newline="\n")
            self._owned = True
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.stream is not None and self._owned:
            self.stream.close()
        elif self.stream is not None:
            self.stream.flush()
        self.stream = None
        return False


class CsvReport(_TextTarget):
    """Writer for CSV reports that start with `# key=value` header lines."""

    def __init__(
        self,
        path: str,
        columns: Sequence[str],
        header: Iterable[tuple[str, str]] = (),
    ):
        super().__init__(path)
        self.columns = tuple(columns)
        self.header = tuple(header)

    def __enter__(self):
        super().__enter__()
        stream = self._require("CsvReport")
        for key, value in self.header:
            stream.write(f"# {key}={value}\n")
        stream.write(",".join(self.columns) + "\n")
        return self

    def write_row(self, values: Sequence[object]):
        """Writes one row.

        This method should be called within a 'with' statement.

        Raises:
            RuntimeError: If the method is called outside of a 'with' statement.
            ValueError: If the row length differs from the number of columns.
        """
        stream = self._require("CsvReport")
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        stream.write(",".join(format_number(v) for v in values) + "\n")

    def write_rows(self, rows: Iterable[Sequence[object]]):
        for row in rows:
            self.write_row(row)

    def write_comment(self, key: str, value: str):
        """Writes a `# key=value` line after the rows."""
        self._require("CsvReport").write(f"# {key}={value}\n")


class ObjWriter(_TextTarget):
    """Writer for triangle meshes in Wavefront OBJ format."""

    def write(self, mesh: RibbonMesh):
        """Writes the vertices and 1-based triangle records of a mesh.

        This method should be called within a 'with' statement.

        Raises:
            RuntimeError: If the method is called outside of a 'with' statement.
        """
        stream = self._require("ObjWriter")
        for x, y, z in mesh.vertices:
            stream.write(f"v {format_number(x)} {format_number(y)} {format_number(z)}\n")
        for i, j, k in mesh.faces + 1:
            stream.write(f"f {i} {j} {k}\n")


def flat_rows(mesh: RibbonMesh) -> list[tuple[float, float, float, float]]:
    """Rows (t, s, Phi1, Phi2) in vertex order."""
    t, s = np.meshgrid(mesh.t, mesh.s, indexing="ij")
    return [
        (float(a), float(b), float(p[0]), float(p[1]))
        for a, b, p in zip(t.ravel(), s.ravel(), mesh.flat)
    ]


CENTERLINE_COLUMNS = ("t", "y1", "y2", "y3") + tuple(
    f"d{k}_{i}" for k in (1, 2, 3) for i in (1, 2, 3)
)


def centerline_rows(t: np.ndarray, directors: Directors) -> list[tuple[float, ...]]:
    """Rows (t, y, d1, d2, d3) matching `CENTERLINE_COLUMNS`."""
    stacked = np.hstack([t[:, None], directors.y, directors.d1, directors.d2, directors.d3])
    return [tuple(float(x) for x in row) for row in stacked]
