"""Allow running as `python -m structured_nart`."""

from structured_nart.cli import main

if __name__ == "__main__":
    main()
