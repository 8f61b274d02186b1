"""plotkit command line: render one figure from a spec file."""

import argparse
import sys

from .figures import FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plotkit")
    sub = parser.add_subparsers(dest="verb", required=True)
    render_p = sub.add_parser("render", help="render a figure from a JSON spec")
    render_p.add_argument("--spec", required=True, help="FigureSpec JSON file")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec.from_file(args.spec)
        out = render(spec)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
