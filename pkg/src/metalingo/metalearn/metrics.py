# The MIT License (MIT)

# Copyright (c) 2024 metalingo contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in
# all copies or substantial portions of the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN
# THE SOFTWARE.
"""Per-iteration records and final results of a run"""
import json
from dataclasses import dataclass, field

CSV_HEADER = "iteration,loss,accuracy"


def _cell(value):
    return "" if value is None else repr(float(value))


@dataclass
class RunMetrics:
    """Rows of (iteration, loss, accuracy) plus named final values.

    ``accuracy`` is None when no held-out data was scored.
    """

    rows: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)

    def record(self, iteration, loss, accuracy=None):
        """Appends one metric row"""
        self.rows.append(
            (int(iteration), float(loss), None if accuracy is None else float(accuracy))
        )

    def __len__(self):
        return len(self.rows)

    def to_csv(self):
        """CSV text with exact (repr) floats"""
        lines = [CSV_HEADER]
        for iteration, loss, accuracy in self.rows:
            lines.append("%d,%s,%s" % (iteration, _cell(loss), _cell(accuracy)))
        return "\n".join(lines) + "\n"

    def summary(self):
        """JSON-ready dict of final values and confusion matrices"""
        return {
            "final": dict(self.final),
            "confusion": {name: [list(map(int, row)) for row in matrix] for name, matrix in self.confusion.items()},
            "iterations": self.rows[-1][0] if self.rows else 0,
        }

    def summary_json(self):
        """Summary serialized with sorted keys"""
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"

    def write(self, run, prefix):
        """Writes <prefix>.csv and <prefix>.json through a RunDirectory"""
        run.write(prefix + ".csv", self.to_csv())
        run.write(prefix + ".json", self.summary_json())
