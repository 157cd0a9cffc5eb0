import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import tempfile
import unittest
from unittest.mock import patch

from fastapi.testclient import TestClient

from app.core.config import settings
from app.db.table_store import save_table
from app.io.config_file import parse_config
from app.main import app
from app.services.structure_tables import build_table

CONFIG = """model.states = 0.1, 0.4
model.intensity = -0.5, 0.5; 0.5, -0.5
model.prior = 0.5, 0.5
model.drift = 0.0, 0.0
model.vol = 0.1, 0.4
policy.kind = poisson
policy.rate = 5.0
grid.t_max = 1.0
grid.n_t = 11
grid.n_z = 61
grid.n_paths = 200
"""


class TestApi(unittest.TestCase):
    """Test cases for the HTTP surface."""

    @classmethod
    def setUpClass(cls):
        cls.client = TestClient(app)
        cls.tmp = tempfile.TemporaryDirectory()
        cls.table_dir = patch.object(settings, "TABLE_DIR", cls.tmp.name)
        cls.table_dir.start()
        cls.config = CONFIG + "paths.table = model.table\n"
        setup = parse_config(cls.config)
        save_table(build_table(setup.chain, setup.model, setup.policy, setup.grid), f"{cls.tmp.name}/model.table")

    @classmethod
    def tearDownClass(cls):
        cls.table_dir.stop()
        cls.tmp.cleanup()

    def test_root_and_health(self):
        health = self.client.get("/health").json()
        self.assertEqual(health["status"], "healthy")
        self.assertEqual(health["table_format_version"], settings.TABLE_FORMAT_VERSION)
        body = self.client.get("/").json()
        self.assertEqual(body["policies"], ["cox", "fixed_grid", "poisson"])

    def test_filter(self):
        ticks = [{"time": 0.0, "log_price": 0.0}, {"time": 0.2, "log_price": 0.01}, {"time": 0.5, "log_price": -0.02}]
        response = self.client.post("/api/v1/filter", json={"config": self.config, "ticks": ticks, "probe_every": 0.1})
        self.assertEqual(response.status_code, 200)
        body = response.json()
        self.assertEqual(body["states"], [0.1, 0.4])
        kinds = [entry["kind"] for entry in body["trajectory"]]
        self.assertEqual(kinds.count("tick"), 3)
        self.assertIn("probe", kinds)
        for entry in body["trajectory"]:
            self.assertAlmostEqual(sum(entry["posterior"]), 1.0)
            self.assertTrue(0.1 - 1e-12 <= entry["volatility_estimate"] <= 0.4 + 1e-12)

    def test_invalid_config(self):
        response = self.client.post("/api/v1/filter", json={"config": "model.states = 0.1", "ticks": []})
        self.assertEqual(response.status_code, 400)

    def test_config_without_table(self):
        response = self.client.post("/api/v1/filter", json={"config": CONFIG, "ticks": []})
        self.assertEqual(response.status_code, 400)
        self.assertIn("paths.table", response.json()["detail"])

    def test_table_outside_the_table_directory_is_refused(self):
        ticks = [{"time": 0.0, "log_price": 0.0}, {"time": 0.2, "log_price": 0.01}]
        for name in ("../model.table", "/etc/passwd", f"{self.tmp.name}/../model.table"):
            config = CONFIG + f"paths.table = {name}\n"
            response = self.client.post("/api/v1/filter", json={"config": config, "ticks": ticks})
            self.assertEqual(response.status_code, 400)
            self.assertIn("outside the table directory", response.json()["detail"])

    def test_absolute_path_inside_the_table_directory(self):
        config = CONFIG + f"paths.table = {self.tmp.name}/model.table\n"
        ticks = [{"time": 0.0, "log_price": 0.0}, {"time": 0.2, "log_price": 0.01}]
        response = self.client.post("/api/v1/filter", json={"config": config, "ticks": ticks})
        self.assertEqual(response.status_code, 200)

    def test_degenerate_likelihood_without_fallback(self):
        ticks = [{"time": 0.0, "log_price": 0.0}, {"time": 0.2, "log_price": 40.0}]
        config = self.config + "filter.fallback = false\n"
        response = self.client.post("/api/v1/filter", json={"config": config, "ticks": ticks})
        self.assertEqual(response.status_code, 422)

    def test_non_increasing_ticks(self):
        ticks = [{"time": 0.0, "log_price": 0.0}, {"time": 0.0, "log_price": 0.1}]
        response = self.client.post("/api/v1/filter", json={"config": self.config, "ticks": ticks})
        self.assertEqual(response.status_code, 400)


if __name__ == '__main__':
    unittest.main()
