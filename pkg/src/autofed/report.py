"""Run reports: line-oriented JSON, delimited summaries, and figures."""

import csv
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def dump_line(obj):
    """Canonical one-line JSON so identical runs give identical bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


class ReportWriter:
    """Append-only JSONL report; a crashed run leaves a parseable prefix."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def write(self, obj):
        self._fh.write(dump_line(obj))
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "config":
        raise ValueError(f"{path}: not a run report (missing config header)")
    header = lines[0]
    rounds = [l for l in lines if l.get("type") == "round"]
    final = next((l for l in lines if l.get("type") == "final"), None)
    return header, rounds, final


def write_metrics_csv(path, final):
    """Final per-client test metrics as a delimited table."""
    fields = ["client", "mae", "rmse", "mse", "mape_percent", "masked_fraction"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for client, m in sorted(final["test"].items()):
            writer.writerow([client] + [repr(m[k]) for k in fields[1:]])
        agg = final["aggregate"]
        writer.writerow(["aggregate"] + [repr(agg[k]) for k in fields[1:]])


def render_training_figure(rounds, path):
    """Per-round train loss and validation MAE curves per client."""
    fig, (ax_loss, ax_mae) = plt.subplots(1, 2, figsize=(10, 4))
    clients = sorted({c["client"] for r in rounds for c in r["clients"]})
    for client in clients:
        xs, ys = [], []
        for r in rounds:
            for c in r["clients"]:
                if c["client"] == client:
                    xs.append(r["round"])
                    ys.append(c["train_loss"])
        ax_loss.plot(xs, ys, label=client)
        vx = [r["round"] for r in rounds if client in r["validation"]]
        vy = [r["validation"][client]["mae"] for r in rounds if client in r["validation"]]
        ax_mae.plot(vx, vy, label=client)
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_title("Training loss")
    ax_mae.set_xlabel("round")
    ax_mae.set_ylabel("validation MAE")
    ax_mae.set_title("Validation MAE")
    ax_mae.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_comparison_figure(table, path):
    """Grouped bars of final aggregate MAE per run."""
    labels = [row["label"] for row in table]
    maes = [row["aggregate"]["mae"] for row in table]
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(labels), 4))
    ax.bar(range(len(labels)), maes)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("test MAE (aggregate)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
