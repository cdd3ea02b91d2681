pytest_plugins = ["bgdepth.tests.common.fixtures"]
