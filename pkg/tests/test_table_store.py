import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import tempfile
import unittest
from unittest.mock import patch

import numpy as np

from app.core.config import settings
from app.core.exceptions import CorruptTableError, ModelHashMismatchError, TableVersionError
from app.db.table_store import load_table, save_table
from app.services.model_core import MarketModel, VolatilityChain
from app.services.policies import CoxPolicy
from app.services.structure_tables import GridSpec, build_table


class TestTableStore(unittest.TestCase):
    """Test cases for table persistence."""

    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [0.5, -0.5]], initial_law=[0.5, 0.5])
        cls.model = MarketModel(drift=[0.0, 0.0], vol=[0.1, 0.4])
        cls.policy = CoxPolicy([5.0, 15.0])
        grid = GridSpec(t_max=0.5, n_t=6, z_min=-2.0, z_max=2.0, n_z=21, n_paths=300, seed=11)
        cls.table = build_table(cls.chain, cls.model, cls.policy, grid)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "cox.table")
        save_table(self.table, self.path)

    def tearDown(self):
        self.tmp.cleanup()

    def _raw(self):
        with open(self.path, "rb") as handle:
            return handle.read()

    def test_load_restores_arrays(self):
        loaded = load_table(self.path, self.chain, self.model, self.policy)
        for name in ("q", "qbar", "p", "q_stderr", "qbar_stderr"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(self.table, name))
        self.assertEqual(loaded.grid, self.table.grid)
        self.assertEqual(loaded.model_hash, self.table.model_hash)

    def test_saves_are_byte_identical(self):
        other = os.path.join(self.tmp.name, "again.table")
        save_table(self.table, other)
        with open(other, "rb") as handle:
            self.assertEqual(handle.read(), self._raw())
        self.assertFalse(os.path.exists(self.path + ".partial"))

    def test_truncated_file(self):
        raw = self._raw()
        with open(self.path, "wb") as handle:
            handle.write(raw[:-100])
        with self.assertRaises(CorruptTableError):
            load_table(self.path, self.chain, self.model, self.policy)

    def test_flipped_payload_byte(self):
        raw = bytearray(self._raw())
        raw[-1] ^= 0xFF
        with open(self.path, "wb") as handle:
            handle.write(bytes(raw))
        with self.assertRaises(CorruptTableError):
            load_table(self.path, self.chain, self.model, self.policy)

    def test_not_a_table(self):
        with open(self.path, "wb") as handle:
            handle.write(b"time,log_price\n0,0\n")
        with self.assertRaises(CorruptTableError):
            load_table(self.path, self.chain, self.model, self.policy)

    def test_missing_file(self):
        with self.assertRaises(CorruptTableError):
            load_table(os.path.join(self.tmp.name, "absent.table"), self.chain, self.model, self.policy)

    def test_format_version_mismatch(self):
        with patch.object(settings, "TABLE_FORMAT_VERSION", settings.TABLE_FORMAT_VERSION + 1):
            with self.assertRaises(TableVersionError):
                load_table(self.path, self.chain, self.model, self.policy)

    def test_model_hash_mismatch(self):
        other_model = MarketModel(drift=[0.0, 0.0], vol=[0.1, 0.5])
        with self.assertRaises(ModelHashMismatchError):
            load_table(self.path, self.chain, other_model, self.policy)
        with self.assertRaises(ModelHashMismatchError):
            load_table(self.path, self.chain, self.model, CoxPolicy([5.0, 20.0]))


if __name__ == '__main__':
    unittest.main()
