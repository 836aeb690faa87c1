import json
import logging
import os
import shutil
import tempfile
import unittest

from horizon_rl.log import LoggerMixin
from horizon_rl.settings import SETTINGS, load_settings


class Worker(LoggerMixin):
    def __init__(self):
        self._init_logger()


class TestSettings(unittest.TestCase):
    """全局配置与日志开关"""

    def setUp(self):
        self.saved = dict(SETTINGS)
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        SETTINGS.clear()
        SETTINGS.update(self.saved)
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def write(self, name, content):
        path = os.path.join(self.test_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(content)
        return path

    def test_override_known_keys(self):
        overrides = {"oracle.policy_cap": 10, "no.such.key": 1}
        path = self.write("settings.json", json.dumps(overrides))
        with self.assertLogs("SETTINGS", "WARNING"):
            self.assertTrue(load_settings(path))
        self.assertEqual(SETTINGS["oracle.policy_cap"], 10)
        self.assertNotIn("no.such.key", SETTINGS)

    def test_invalid_files(self):
        self.assertFalse(load_settings(os.path.join(self.test_dir, "missing.json")))
        self.assertFalse(load_settings(self.write("settings.txt", "{}")))
        self.assertFalse(load_settings(self.write("bad.json", "{oops")))
        self.assertFalse(load_settings(self.write("list.json", "[]")))

    def test_log_gating(self):
        """低于配置级别或关闭开关时不输出"""
        SETTINGS["log.enabled"] = True
        SETTINGS["log.level"] = logging.WARNING
        worker = Worker()
        with self.assertLogs("Worker", "WARNING") as logs:
            worker._log(logging.INFO, "忽略")
            worker._log(logging.WARNING, "输出")
        self.assertEqual(len(logs.output), 1)
        self.assertIn("输出", logs.output[0])

        worker.configure_logging(False)
        with self.assertRaises(AssertionError):
            with self.assertLogs("Worker", "DEBUG"):
                worker._log(logging.ERROR, "关闭")


if __name__ == '__main__':
    unittest.main(verbosity=2)
