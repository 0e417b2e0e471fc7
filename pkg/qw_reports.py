import io
import logging
import os
from typing import Any, Dict, List

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from qw_errors import OutputError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class Report(BaseModel):
    """One experiment's table plus the parameters needed to reproduce it."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    title: str
    metadata: Dict[str, Any] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)
    data: pd.DataFrame

    def header_lines(self) -> List[str]:
        lines = [f"# experiment: {self.title}"]
        for key in sorted(self.metadata):
            lines.append(f"# {key}: {_format_value(self.metadata[key])}")
        lines.extend(f"# note: {note}" for note in self.notes)
        return lines

    def render_csv(self) -> str:
        buffer = io.StringIO()
        buffer.write("\n".join(self.header_lines()) + "\n")
        self.data.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return buffer.getvalue()


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def write_report(report: Report, path: str) -> str:
    text = report.render_csv()
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise OutputError(path, f"directory {directory} does not exist")
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
    logger.info(f"Wrote {report.title} ({len(report.data)} rows) to {path}")
    return path


def read_report(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#")
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
