from contextlib import redirect_stderr, redirect_stdout
import gzip
import io
import json
from pathlib import Path
from tempfile import TemporaryDirectory
from typing import List, Tuple
from unittest import TestCase

from jeffmix.cli import main
from jeffmix.fisher import UnknownConfig
from jeffmix.harness import CLOSE_MEANS_MODEL, ExperimentSpec
from jeffmix.mcmc import McmcConfig
from jeffmix.mixture import MixtureModel, gaussian, student_t


def run(*args: str) -> Tuple[int, str, str]:
    stdout, stderr = io.StringIO(), io.StringIO()
    with redirect_stdout(stdout), redirect_stderr(stderr):
        code = main(["jeffmix", "--database", ":memory:", *args])
    return code, stdout.getvalue(), stderr.getvalue()


class CliTestCase(TestCase):
    def setUp(self):
        self._tmpdir = TemporaryDirectory()
        self.tmp = Path(self._tmpdir.name)
        self.model = self.tmp / "model.json"
        self.model.write_text(CLOSE_MEANS_MODEL.dumps())

    def tearDown(self):
        self._tmpdir.cleanup()

    def out(self, name: str = "out") -> Path:
        return self.tmp / name

    def assertWritten(self, directory: Path, names: List[str]):
        self.assertEqual(sorted(p.name for p in directory.iterdir()), sorted(names + ["meta.json"]))


class TestGlobalOptions(CliTestCase):
    def test_version(self):
        code, stdout, _ = run("--version")
        self.assertEqual(code, 0)
        self.assertTrue(stdout)

    def test_list(self):
        code, stdout, _ = run("--list")
        self.assertEqual(code, 0)
        self.assertIn("method  riemann", stdout)
        self.assertIn("prior   hierarchical", stdout)

    def test_no_command(self):
        code, _, stderr = run()
        self.assertEqual(code, 2)
        self.assertIn("a command is required", stderr)

    def test_argparse_errors(self):
        with redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                main(["jeffmix", "fisher", "--config", "everything"])


class TestFisherCommand(CliTestCase):
    def test_outputs(self):
        code, _, stderr = run(
            "fisher", "--model", str(self.model), "--config", "weights-only", "-o", str(self.out())
        )
        self.assertEqual(code, 0, stderr)
        self.assertWritten(self.out(), ["fisher.csv", "fisher.json"])
        self.assertEqual((self.out() / "fisher.csv").read_text().splitlines()[0], "p1")
        fisher = json.loads((self.out() / "fisher.json").read_text())
        self.assertEqual(fisher["labels"], ["p1"])
        self.assertEqual(fisher["integration"]["method"]["name"], "auto")
        meta = json.loads((self.out() / "meta.json").read_text())
        self.assertEqual(meta["command"], "fisher")
        self.assertEqual(meta["outputs"], ["fisher.csv", "fisher.json"])
        self.assertEqual(meta["argv"][:3], ["--database", ":memory:", "fisher"])
        self.assertIn("log det", stderr)

    def test_invalid_configuration(self):
        heavy = self.tmp / "heavy.json"
        heavy.write_text(
            MixtureModel((student_t(3.0, 0.0, 1.0), gaussian(3.0, 1.0)), (0.5, 0.5)).dumps()
        )
        code, _, stderr = run(
            "fisher", "--model", str(heavy), "--config", "means-only", "-o", str(self.out())
        )
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("config: "))
        self.assertFalse(self.out().exists())

    def test_inapplicable_flag(self):
        code, _, stderr = run(
            "fisher",
            "--model",
            str(self.model),
            "--config",
            "weights-only",
            "--method",
            "riemann",
            "--draws",
            "10",
            "-o",
            str(self.out()),
        )
        self.assertEqual(code, 2)
        self.assertIn("draws", stderr)
        self.assertFalse(self.out().exists())

    def test_missing_model(self):
        code, _, stderr = run(
            "fisher", "--model", str(self.tmp / "absent.json"), "--config", "all"
        )
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("model: "))

    def test_replay(self):
        code, _, stderr = run(
            "fisher",
            "--model",
            str(self.model),
            "--config",
            "all",
            "--method",
            "mc",
            "--seed",
            "3",
            "-o",
            str(self.out()),
        )
        self.assertEqual(code, 0, stderr)
        replayed = self.out("replayed")
        code, _, stderr = run(
            "--replay", str(self.out() / "meta.json"), "--replay-output-dir", str(replayed)
        )
        self.assertEqual(code, 0, stderr)
        for name in ("fisher.csv", "fisher.json"):
            self.assertEqual((self.out() / name).read_bytes(), (replayed / name).read_bytes())
        original = json.loads((self.out() / "meta.json").read_text())
        meta = json.loads((replayed / "meta.json").read_text())
        self.assertEqual(meta["argv"], original["argv"])
        self.assertEqual(meta["seeds"], {"integration": 3})


class TestGridCommands(CliTestCase):
    def test_prior_grid(self):
        code, _, stderr = run(
            "prior-grid",
            "--model",
            str(self.model),
            "--config",
            "weights-only",
            "--axis",
            "p1:0.1:0.9:5",
            "-o",
            str(self.out()),
        )
        self.assertEqual(code, 0, stderr)
        lines = (self.out() / "grid.csv").read_text().splitlines()
        self.assertEqual(lines[0], "p1,value")
        self.assertEqual(len(lines), 6)

    def test_unknown_axis(self):
        code, _, stderr = run(
            "prior-grid",
            "--model",
            str(self.model),
            "--config",
            "weights-only",
            "--axis",
            "mu1:0:1:3",
            "-o",
            str(self.out()),
        )
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("grid.mu1: "))
        self.assertFalse(self.out().exists())

    def test_posterior_grid(self):
        grid = self.tmp / "grid.json"
        grid.write_text(
            json.dumps(
                {
                    "axes": [
                        {"name": "mu1", "lo": -2, "hi": 0, "steps": 3},
                        {"name": "mu2", "lo": 1, "hi": 3, "steps": 3},
                    ],
                    "scale": "natural",
                }
            )
        )
        code, _, stderr = run(
            "posterior-grid",
            "--model",
            str(self.model),
            "--config",
            "means-only",
            "--prior",
            "constant-means",
            "--grid",
            str(grid),
            "--sample-size",
            "20",
            "--seed",
            "4",
            "-o",
            str(self.out()),
        )
        self.assertEqual(code, 0, stderr)
        lines = (self.out() / "grid.csv").read_text().splitlines()
        self.assertEqual(lines[0], "mu1,mu2,value")
        self.assertEqual(len(lines), 10)
        meta = json.loads((self.out() / "meta.json").read_text())
        self.assertEqual(meta["seeds"], {"data": 4})


class TestMcmcCommand(CliTestCase):
    def mcmc(self, output: Path, *extra: str) -> Tuple[int, str]:
        code, _, stderr = run(
            "mcmc",
            "--model",
            str(self.model),
            "--config",
            "means-only",
            "--prior",
            "constant-means",
            "--sample-size",
            "30",
            "--iterations",
            "300",
            "--burnin",
            "100",
            "--seed",
            "5",
            "-o",
            str(output),
            *extra,
        )
        return code, stderr

    def test_chain(self):
        code, stderr = self.mcmc(self.out())
        self.assertEqual(code, 0, stderr)
        self.assertWritten(self.out(), ["chain.csv.gz", "diagnostics.jsonl"])
        with gzip.open(self.out() / "chain.csv.gz", "rt") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "iteration,mu1,mu2,log_post,accepted")
        self.assertEqual(len(lines), 301)
        diagnostics = [
            json.loads(line) for line in (self.out() / "diagnostics.jsonl").read_text().splitlines()
        ]
        self.assertEqual(len(diagnostics), 1)
        self.assertIn("loglik_ratio", diagnostics[0])
        meta = json.loads((self.out() / "meta.json").read_text())
        self.assertEqual(set(meta["seeds"]), {"master", "data", "init", "chain"})

    def test_deterministic(self):
        self.assertEqual(self.mcmc(self.out("a"))[0], 0)
        self.assertEqual(self.mcmc(self.out("b"))[0], 0)
        for name in ("chain.csv.gz", "diagnostics.jsonl"):
            self.assertEqual(
                (self.out("a") / name).read_bytes(), (self.out("b") / name).read_bytes()
            )

    def test_too_little_data(self):
        code, stderr = self.mcmc(self.out(), "--sample-size", "1")
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("data: "))

    def test_unsupported_prior(self):
        code, stderr = self.mcmc(self.out(), "--prior", "hierarchical")
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("prior: "))


class TestReplicateCommand(CliTestCase):
    def test_replicate(self):
        spec = ExperimentSpec(
            truth=CLOSE_MEANS_MODEL,
            config=UnknownConfig.MEANS_ONLY,
            prior="constant-means",
            sample_sizes=(20,),
            replications=5,
            mcmc=McmcConfig(iterations=1000, burnin=200),
        )
        path = self.tmp / "spec.json"
        path.write_text(json.dumps(spec.to_obj()))
        code, _, stderr = run(
            "replicate",
            "--spec",
            str(path),
            "--replications",
            "2",
            "--iterations",
            "300",
            "--burnin",
            "100",
            "--seed",
            "8",
            "-j",
            "1",
            "-o",
            str(self.out()),
        )
        self.assertEqual(code, 0, stderr)
        self.assertWritten(self.out(), ["report.csv", "diagnostics.jsonl", "spec.json"])
        used = ExperimentSpec.from_obj(json.loads((self.out() / "spec.json").read_text()))
        self.assertEqual(used.replications, 2)
        self.assertEqual(used.master_seed, 8)
        self.assertEqual((used.mcmc.iterations, used.mcmc.burnin), (300, 100))
        lines = (self.out() / "report.csv").read_text().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[1].startswith("20,2,"))
        self.assertIn("n=20:", stderr)

    def test_invalid_spec(self):
        path = self.tmp / "spec.json"
        obj = {"truth": CLOSE_MEANS_MODEL.to_obj(), "config": "means-only", "replications": 0}
        path.write_text(json.dumps(obj))
        code, _, stderr = run("replicate", "--spec", str(path), "-o", str(self.out()))
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("replications: "))

    def test_scale_flag(self):
        path = self.tmp / "spec.json"
        path.write_text(json.dumps({"truth": CLOSE_MEANS_MODEL.to_obj(), "config": "means-only"}))
        for flag in ("--paper-scale", "--full-scale"):
            with self.subTest(flag=flag):
                # the 10^4 burn-in of the full-size runs leaves no room for 300 iterations
                code, _, stderr = run(
                    "replicate",
                    "--spec",
                    str(path),
                    flag,
                    "--iterations",
                    "300",
                    "-o",
                    str(self.out()),
                )
                self.assertEqual(code, 2)
                self.assertIn("burnin (10000)", stderr)
                self.assertFalse(self.out().exists())

    def test_max_workers(self):
        path = self.tmp / "spec.json"
        path.write_text(json.dumps({"truth": CLOSE_MEANS_MODEL.to_obj(), "config": "means-only"}))
        code, _, stderr = run("replicate", "--spec", str(path), "-j", "0")
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("max-workers: "))


class TestProbeCommand(CliTestCase):
    def probe(self, *args: str) -> Tuple[int, str]:
        code, _, stderr = run("probe", *args, "--points-per-axis", "100", "-o", str(self.out()))
        return code, stderr

    def test_standard_normal(self):
        code, stderr = self.probe("--density", "standard-normal", "--boxes", "2,4,8")
        self.assertEqual(code, 0, stderr)
        lines = (self.out() / "probe.csv").read_text().splitlines()
        self.assertEqual(lines[-1], "# classification=plateau")
        self.assertIn("standard-normal: plateau", stderr)

    def test_delta_conditional(self):
        code, stderr = self.probe("--prior", "delta-conditional", "--boxes", "20,40")
        self.assertEqual(code, 0, stderr)
        lines = (self.out() / "probe.csv").read_text().splitlines()
        self.assertEqual(lines[0], "lo1,hi1,mass")
        self.assertEqual(lines[-1], "# classification=diverging")
        self.assertEqual(len(lines), 4)

    def test_weights_only(self):
        code, stderr = self.probe(
            "--density", "weights-only", "--model", str(self.model), "--boxes", "0.25,0.4"
        )
        self.assertEqual(code, 0, stderr)
        self.assertTrue((self.out() / "probe.csv").exists())

    def test_invalid_boxes(self):
        code, stderr = self.probe("--density", "standard-normal", "--boxes", "4,2")
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("boxes: "))
        code, stderr = self.probe(
            "--density", "weights-only", "--model", str(self.model), "--boxes", "0.25,0.6"
        )
        self.assertEqual(code, 2)
        code, stderr = self.probe("--density", "delta-conditional", "--boxes", "1", "--p", "1.5")
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("delta-conditional: "))


class TestIntegratorsCommand(CliTestCase):
    def test_integrators(self):
        code, _, stderr = run(
            "integrators",
            "--model",
            str(self.model),
            "--draw-grid",
            "100,200",
            "--repeats",
            "3",
            "-o",
            str(self.out()),
        )
        self.assertEqual(code, 0, stderr)
        lines = (self.out() / "integrators.csv").read_text().splitlines()
        self.assertEqual(lines[0], "model,element,a,b,draws,riemann,quad,mc_mean,mc_sd,repeats")
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[1].startswith("0,p1/p1,0,0,100,"))

    def test_invalid_draw_grid(self):
        code, _, stderr = run("integrators", "--draw-grid", "1,100", "-o", str(self.out()))
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("draw-grid: "))
