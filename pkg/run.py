#!/usr/bin/env python3
"""
Main runner for flex
Checks the dependencies first, then hands over to main
"""
import sys


def run() -> int:
    """Start the CLI"""
    from modules import check_dependencies

    missing = check_dependencies()
    if missing:
        print(f"error: missing packages: {', '.join(missing)}", file=sys.stderr)
        print("Run: pip install -r requirements.txt", file=sys.stderr)
        return 1

    from main import main
    return main()


if __name__ == "__main__":
    sys.exit(run())
