import argparse
import logging
import sys

import config
from app import commands
from app.schemas import EnforcementPoint

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshsim", description=config.PROJECT_NAME)
    parser.add_argument("--version", action="version", version=f"%(prog)s {config.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="Workflow -> политика default-deny")
    p.add_argument("--workflow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default=config.DEFAULT_METHOD)
    p.add_argument("--path-template", default=config.PATH_TEMPLATE)
    p.add_argument("--time-window", action="append", metavar="AGENT=MIN-MAX",
                   help="Окно часов для правил агента, можно повторять")
    p.set_defaults(handler=commands.cmd_compile)

    p = sub.add_parser("evaluate", help="Решение политики для одного запроса")
    p.add_argument("--policy", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--password", default=config.DEFAULT_PASSWORD)
    p.add_argument("--method", default=config.DEFAULT_METHOD)
    p.add_argument("--path", required=True)
    p.add_argument("--attr", action="append", metavar="KEY=VALUE")
    p.add_argument("--hour", type=int, default=config.SIM_HOUR)
    p.set_defaults(handler=commands.cmd_evaluate)

    p = sub.add_parser("simulate", help="Развернуть mesh и прогнать трафик")
    p.add_argument("--workflow", required=True)
    p.add_argument("--policy", required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--sweep", action="store_true", help="Все N(N-1)M коммуникаций (по умолчанию)")
    mode.add_argument("--script", help="JSON-список шагов {src, dst, method, path, body}")
    p.add_argument("--fault", action="append", metavar="KIND:TARGETS",
                   help="disable-policy:A, plaintext:A,B, rogue-edge:A,B, tamper-cert:A")
    p.add_argument("--seed", type=int, default=config.SIM_SEED)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", help="JSON-lines аудита идентичности (по умолчанию <out>.identity.jsonl)")
    p.add_argument("--enforcement-point", default=config.ENFORCEMENT_POINT,
                   choices=[e.value for e in EnforcementPoint])
    p.add_argument("--no-policy-sidecar", action="store_true")
    p.add_argument("--allow-all", action="store_true")
    p.add_argument("--hour", type=int, default=config.SIM_HOUR)
    p.add_argument("--methods", default=",".join(config.METHODS))
    p.add_argument("--signature-scheme", default=config.SIGNATURE_SCHEME, choices=["hmac", "ed25519"])
    p.set_defaults(handler=commands.cmd_simulate)

    p = sub.add_parser("verify", help="Сверить захват с политикой")
    p.add_argument("--policy", required=True)
    p.add_argument("--captures", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(handler=commands.cmd_verify)

    p = sub.add_parser("bench", help="Бенчмарк старта или задержки запросов")
    p.add_argument("--kind", required=True, choices=["startup", "request"])
    p.add_argument("--levels", help=f"Через запятую из {', '.join(config.BENCH_LEVELS)}")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=config.SIM_SEED)
    p.add_argument("--workflow", help="По умолчанию workflow PoC")
    p.add_argument("--policy", help="По умолчанию политика PoC")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=commands.cmd_bench)

    p = sub.add_parser("stats", help="t-тест, ANOVA или попарные сравнения по CSV")
    p.add_argument("--kind", required=True, choices=["ttest", "anova", "pairwise"])
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--where", action="append", metavar="COLUMN=VALUE")
    p.add_argument("--alpha", type=float, default=config.ALPHA)
    p.set_defaults(handler=commands.cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse завершает с 2 при ошибке флагов, с 0 на --help
        return e.code if isinstance(e.code, int) else commands.EXIT_ERROR
    return args.handler(args)


if __name__ == "__main__":
    logging.basicConfig(level=config.LOG_LEVEL, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(main())
