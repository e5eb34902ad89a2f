#!/usr/bin/env python3
"""
lora-fuse - cloud-edge LoRA toolkit
Prune a backbone, train adapters per edge domain, recover, de-conflict and fuse them.
"""
import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from dotenv import load_dotenv

from cli.commands import EXIT_RUNTIME, dispatch
from utils.log import configure_logging


def main() -> int:
    """Main entry point."""
    load_dotenv()
    configure_logging()
    return dispatch(sys.argv[1:])


if __name__ == '__main__':
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n✗ interrupted", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)
