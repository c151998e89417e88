import logging
import os
import sys

from dotenv import load_dotenv

from cli import main as run_cli


def main() -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("POLAR_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )

    try:
        return run_cli(sys.argv[1:])
    except KeyboardInterrupt:
        logging.getLogger(__name__).info("Shutdown requested...")
        return 130


if __name__ == "__main__":
    sys.exit(main())
