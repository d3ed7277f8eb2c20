# SSF mortality studies - command line entry point
# Copyright (c) 2025 LAB271
# SPDX-License-Identifier: Apache-2.0

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "spikes" / "009_ssf_mortality"))

from cli_io import main as cli_main  # noqa: E402


def main():
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
