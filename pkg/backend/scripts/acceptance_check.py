"""
Acceptance Check Script
Runs the bundled acceptance config, prints PASS/FAIL per experiment and
re-runs it with a different worker count to confirm byte-identical tables
"""

import argparse
import sys
import tempfile
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent.parent))
from backend.api.run import execute, load_config  # noqa: E402
from backend.core.config import CONFIGS_DIR, RESULTS_DIR  # noqa: E402
from backend.main import configure_logging  # noqa: E402


# Color codes for terminal output
class Colors:
    GREEN = "\033[92m"
    RED = "\033[91m"
    BLUE = "\033[94m"
    END = "\033[0m"


def print_header(text: str) -> None:
    print(f"\n{Colors.BLUE}{'=' * 80}{Colors.END}")
    print(f"{Colors.BLUE}{text.center(80)}{Colors.END}")
    print(f"{Colors.BLUE}{'=' * 80}{Colors.END}\n")


def print_verdict(ok: bool, text: str) -> None:
    tag, color = ("PASS", Colors.GREEN) if ok else ("FAIL", Colors.RED)
    print(f"{color}[{tag}] {text}{Colors.END}")


def csv_bytes(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))}


def check_determinism(config, first_dir: Path, threads: int) -> bool:
    """Re-run with another worker count; every CSV must match byte for byte"""
    with tempfile.TemporaryDirectory() as tmp:
        execute(config, tmp, threads=threads)
        again = csv_bytes(Path(tmp))
    first = csv_bytes(first_dir)
    differing = sorted(name for name in first.keys() | again.keys() if first.get(name) != again.get(name))
    for name in differing:
        print(f"    differs: {name}")
    return not differing


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(CONFIGS_DIR / "acceptance.json"))
    parser.add_argument("--out-dir", default=str(RESULTS_DIR / "acceptance"))
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--recheck-threads", type=int, default=2, help="0 skips the determinism re-run")
    args = parser.parse_args()
    configure_logging("WARNING")

    config = load_config(args.config)
    print_header(f"ACCEPTANCE: {args.config}")
    report = execute(config, args.out_dir, threads=args.threads)

    for e in report.experiments:
        note = f" ({e.error['error_code']})" if e.error else ""
        print_verdict(e.passed, f"{e.index:02d} {e.kind:<13} {e.label}{note}  [{e.runtime_seconds:.1f}s]")

    ok = report.passed
    if args.recheck_threads:
        deterministic = check_determinism(config, Path(args.out_dir), args.recheck_threads)
        print_verdict(deterministic, f"tables identical with {args.recheck_threads} workers")
        ok &= deterministic

    print_header("ALL CHECKS PASSED" if ok else "SOME CHECKS FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
