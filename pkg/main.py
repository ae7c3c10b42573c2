"""
flex - Main Entry Point
Feature-logic embeddings for first-order-logic queries over knowledge graphs
"""
import sys

from dotenv import load_dotenv

from modules.config import setup_logging
from modules.errors import ConfigError


def main(argv=None) -> int:
    """Load .env, configure logging from FLEX_LOG / FLEX_LOG_FILE, run one subcommand"""
    load_dotenv()
    try:
        setup_logging()
    except ConfigError as e:
        print(f"error: ConfigError: {e}", file=sys.stderr)
        return 1

    # Import after logging is configured
    from modules.cli import dispatch
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
