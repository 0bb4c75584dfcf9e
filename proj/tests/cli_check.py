"""End-to-end checks of the command-line tool: schemas, exit codes, reproducibility."""

import csv
import filecmp
import json
import math
import os
import random
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import jsonschema
from referencing import Registry, Resource

CLI = os.environ["IGADA_CLI"]
ROOT = Path(os.environ["IGADA_ROOT"])
SCHEMAS = ROOT / "schemas"
TRACE = ROOT / "data" / "ucr" / "Trace"


def load_schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


REGISTRY = Registry().with_resources(
    (p.name, Resource.from_contents(json.loads(p.read_text()))) for p in SCHEMAS.glob("*.schema.json")
)


def validate(path, schema):
    jsonschema.Draft202012Validator(load_schema(schema), registry=REGISTRY).validate(json.loads(Path(path).read_text()))


def run(*args, check=None):
    p = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, timeout=600)
    if check is not None and p.returncode != check:
        raise AssertionError(f"exit {p.returncode} != {check}\nstdout: {p.stdout}\nstderr: {p.stderr}")
    return p


def write_sinusoids(path, per_class=(40, 24, 14), T=16, seed=5, noise=0.35):
    """Imbalanced three-class sinusoid set in the flat CSV layout, one group per window."""
    rng = random.Random(seed)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["group", "label"] + [f"v_{t}_0" for t in range(T)])
        i = 0
        for c, n in enumerate(per_class):
            for _ in range(n):
                a, ph = rng.uniform(0.5, 1.5), rng.uniform(0, 2 * math.pi)
                vals = [a * math.sin(2 * math.pi * (c + 1) * t / T + ph) + rng.gauss(0, noise) for t in range(T)]
                w.writerow([f"w{i}", c] + [f"{v:.6f}" for v in vals])
                i += 1


class CliCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, **extra):
        cfg = {"dataset": {"format": "ucr", "train": str(TRACE / "Trace_TRAIN.tsv"), "test": str(TRACE / "Trace_TEST.tsv")},
               "repeats": 1}
        cfg.update(extra)
        path = self.dir / f"cfg_{len(list(self.dir.glob('cfg_*')))}.json"
        path.write_text(json.dumps(cfg))
        return path

    def synthetic_config(self, **extra):
        data = self.dir / "sinusoids.csv"
        write_sinusoids(data)
        cfg = {"dataset": {"format": "csv", "path": str(data), "T": 16, "F": 1},
               "split": {"train": 0.6, "val": 0.25, "test": 0.15},
               "stats": {"probe_count": 60, "n_perm": 5},
               "repeats": 2}
        cfg.update(extra)
        return self.config(**cfg)


class Capabilities(CliCase):
    def test_tensor_validates_and_reruns_identically(self):
        cfg = self.config()
        run("--config", cfg, "--seed", 4, "--out", self.dir / "a", "capabilities", check=0)
        run("--config", cfg, "--seed", 4, "--out", self.dir / "b", "--jobs", 3, "capabilities", check=0)
        validate(self.dir / "a" / "tensor.json", "tensor")
        tensor = json.loads((self.dir / "a" / "tensor.json").read_text())
        self.assertEqual(len(tensor["cells"]), 4 * 4)
        for cell in tensor["cells"]:
            self.assertEqual(cell["S"] + cell["C"], 1.0)
        for name in ("tensor.json", "tensor.txt"):
            self.assertTrue(filecmp.cmp(self.dir / "a" / name, self.dir / "b" / name, shallow=False), name)

    def test_unknown_generator_is_a_validation_error(self):
        p = run("--config", self.config(generators=[{"type": "imagentime"}]), "--out", self.dir, "capabilities", check=1)
        self.assertIn("imagentime", p.stderr)


class Augment(CliCase):
    def test_artifacts_validate_and_conserve(self):
        cfg = self.synthetic_config()
        run("--config", cfg, "--seed", 2, "--out", self.dir / "a", "augment", check=0)
        out = self.dir / "a"
        validate(out / "summary.json", "augment_summary")
        summary = json.loads((out / "summary.json").read_text())
        self.assertEqual([r["seed"] for r in summary["runs"]], [2, 3])
        for run_summary in summary["runs"]:
            d = out / f"seed_{run_summary['seed']}"
            validate(d / "summary.json", "run_summary")
            validate(d / "rounds.json", "rounds")
            validate(d / "tensor.json", "tensor")
            rounds = json.loads((d / "rounds.json").read_text())
            accepted_b = sum(r["B_t"] for r in rounds if r["accepted"])
            per_gen = sum(sum(v) for v in run_summary["generated"].values())
            self.assertEqual(per_gen, run_summary["generated_total"])
            self.assertEqual(run_summary["final_train_size"], run_summary["train_size"] + accepted_b)
            with open(d / "augmented_train.csv") as f:
                self.assertEqual(sum(1 for _ in f) - 1, run_summary["final_train_size"])
            with open(d / "plot.csv") as f:
                rows = list(csv.DictReader(f))
            self.assertEqual(list(rows[0].keys()), ["t", "Gamma_t", "val_acc", "test_acc", "B_t", "accepted"])
            self.assertEqual(len(rows), len(rounds) + 1)
        self.assertGreater(sum(r["accepted_rounds"] for r in summary["runs"]), 0)

    def test_rerun_is_bitwise_identical(self):
        cfg = self.synthetic_config(repeats=1)
        for name in ("a", "b"):
            run("--config", cfg, "--seed", 7, "--out", self.dir / name, "augment", check=0)
        d = "seed_7"
        for f in ("rounds.json", "summary.json", "augmented_train.csv", "tensor.json", "model.json", "plot.csv"):
            self.assertTrue(filecmp.cmp(self.dir / "a" / d / f, self.dir / "b" / d / f, shallow=False), f)

    def test_launch_rejection_keeps_the_train_split(self):
        run("--config", self.config(), "--seed", 0, "--out", self.dir, "augment", check=0)
        s = json.loads((self.dir / "seed_0" / "summary.json").read_text())
        self.assertEqual(s["stop_reason"], "launch_rejected")
        self.assertEqual(s["final_train_size"], s["train_size"])
        with open(self.dir / "seed_0" / "augmented_train.csv") as f:
            rows = list(csv.reader(f))[1:]
        self.assertEqual(len(rows), s["train_size"])
        self.assertTrue(all(r[2] == "real" for r in rows))

    def test_failing_classifier_is_a_runtime_failure(self):
        cfg = self.config(classifier={"type": "subprocess", "command": "exit 3"})
        p = run("--config", cfg, "--out", self.dir, "augment", check=2)
        self.assertIn("exited with code 3", p.stderr)


class Evaluate(CliCase):
    def test_report_validates_and_decision_trace_replays(self):
        cfg = self.synthetic_config(repeats=1)
        run("--config", cfg, "--seed", 1, "--out", self.dir / "a", "augment", check=0)
        model = self.dir / "a" / "seed_1" / "model.json"
        run("--config", cfg, "--seed", 1, "--out", self.dir / "e", "evaluate", "--model", model, "--split", "test",
            "--decisions", self.dir / "dec.csv", check=0)
        validate(self.dir / "e" / "eval_test.json", "eval_report")
        run("--out", self.dir / "en", "energy-replay", "--trace", self.dir / "dec.csv", check=0)
        validate(self.dir / "en" / "energy.json", "energy")

    def test_missing_and_unknown_model(self):
        cfg = self.config()
        run("--config", cfg, "--out", self.dir, "evaluate", "--model", self.dir / "none.json", check=1)
        (self.dir / "m.json").write_text(json.dumps({"type": "forest"}))
        run("--config", cfg, "--out", self.dir, "evaluate", "--model", self.dir / "m.json", check=1)


class EnergyReplay(CliCase):
    def test_ledger_matches_span_arithmetic(self):
        trace = self.dir / "t.csv"
        trace.write_text("minute,class\n0,0\n240,0\n480,2\n540,1\n")
        p = run("--out", self.dir, "energy-replay", "--trace", trace, check=0)
        validate(self.dir / "energy.json", "energy")
        ledger = json.loads(p.stdout)
        self.assertEqual(ledger["saved_samplings"], 60)
        self.assertEqual(ledger["extra_samplings"], 15)
        self.assertAlmostEqual(ledger["saved_energy_mwh"], 60 * 3.73, places=9)

    def test_unsorted_trace_and_missing_file_fail(self):
        trace = self.dir / "t.csv"
        trace.write_text("10,0\n5,1\n")
        p = run("energy-replay", "--trace", trace, check=1)
        self.assertIn("line 2", p.stderr)
        run("energy-replay", "--trace", self.dir / "absent.csv", check=1)


class Usage(CliCase):
    def test_usage_errors(self):
        run(check=1)
        run("augment", check=1)
        run("--config", self.dir / "absent.json", "augment", check=1)
        run("frobnicate", check=1)
        self.assertEqual(run("--help").returncode, 0)


if __name__ == "__main__":
    unittest.main(argv=sys.argv[:1] + sys.argv[1:])
