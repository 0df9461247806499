"""Metrics CSV: one row per (iteration, net) plus one row per (epoch, net) evaluation.

The file is written under a temporary name and renamed on close, so a
reader never sees a half-written file.
"""
import csv
import json
import os

COLUMNS = ["row", "iter", "epoch", "net", "role", "L_C", "L_D", "L_F", "total",
           "perturbed", "perturb_kind", "perturb_params", "test_acc"]


def _num(x):
    return repr(float(x))


class MetricsWriter:
    def __init__(self, path):
        self.path = os.fspath(path)
        self.tmp_path = self.path + ".tmp"
        self._fh = open(self.tmp_path, "w", newline="")
        self._csv = csv.DictWriter(self._fh, fieldnames=COLUMNS, restval="", lineterminator="\n")
        self._csv.writeheader()

    def write_step(self, step):
        ev = step.event
        for i in range(len(step.l_c)):
            hit = ev is not None and ev.target_net == i
            self._csv.writerow({
                "row": "step",
                "iter": step.iteration,
                "net": i,
                "role": step.roles[i],
                "L_C": _num(step.l_c[i]),
                "L_D": _num(step.l_d[i]),
                "L_F": _num(step.l_f[i]),
                "total": _num(step.total[i]),
                "perturbed": int(hit),
                "perturb_kind": ev.kind if hit else "",
                "perturb_params": json.dumps(ev.params_dict(), sort_keys=True, separators=(",", ":")) if hit else "",
            })

    def write_eval(self, epoch, accs):
        for i, acc in enumerate(accs):
            self._csv.writerow({"row": "eval", "epoch": epoch, "net": i, "test_acc": _num(acc)})

    def close(self):
        if self._fh.closed:
            return
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._fh.close()
        os.replace(self.tmp_path, self.path)


def read_metrics(path):
    """Return ``(step_rows, eval_rows)`` as lists of dicts with numeric fields parsed."""
    steps, evals = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if row["row"] == "step":
                steps.append({
                    "iter": int(row["iter"]), "net": int(row["net"]), "role": row["role"],
                    "L_C": float(row["L_C"]), "L_D": float(row["L_D"]), "L_F": float(row["L_F"]),
                    "total": float(row["total"]), "perturbed": int(row["perturbed"]),
                    "perturb_kind": row["perturb_kind"],
                    "perturb_params": json.loads(row["perturb_params"]) if row["perturb_params"] else None,
                })
            else:
                evals.append({"epoch": int(row["epoch"]), "net": int(row["net"]),
                              "test_acc": float(row["test_acc"])})
    return steps, evals
