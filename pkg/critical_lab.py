#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
临界泊松势数值实验室 命令行入口
功能：以子命令方式运行各模块的实验，支持配置文件、种子与 JSON/CSV 结果记录
退出码：0 成功，1 参数或前置条件错误，2 数值求解失败
"""

import argparse
import configparser
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from asymptotics import (extreme_scaling_experiment, moment_finiteness, parse_slowly_varying,
                         predicted_normalization, rate_verdict)
from brownian import exit_lower_bound_check, make_domain
from config import config
from experiment_records import ExperimentRecord, ExperimentRecorder
from feynman_kac import FKConfig, PlantedCluster, anderson_moment, cap_sweep, quenched_moment
from hardy import H_dichotomy, H_functional, hardy_ratio_gM, validate_H_functional_3d
from lab_errors import EXIT_OK, ConfigurationError, DomainError, LabError, exit_code_for
from poisson_field import Box, check_association, dump_field, load_field, sample_field
from potential import (DROP, TruncationScheme, eval_renormalized, eval_singular_local,
                       eval_truncated_field, mgf_monte_carlo, truncated_mgf_exact)
from spectral import (DirichletProblem, dump_eigenvector, eigenvalue_of_field,
                      free_box_eigenvalue, planted_clamp_sweep, principal_eigenvalue)

logger = logging.getLogger(__name__)

COMMANDS = ("field", "potential", "fk", "eigen", "hardy", "rates", "extremes",
            "association", "exit-check")
# 只影响运行方式、不写入参数记录的选项
_RUNTIME_KEYS = ("config", "threads", "out", "format", "log_level", "log_file", "handler", "command")


class LabArgumentParser(argparse.ArgumentParser):
    """参数错误抛 ConfigurationError，由 main 统一映射退出码"""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


# ==================== 参数类型 ====================

def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"无法解析数列: {text!r}") from e


def _vector(text: str):
    values = _float_list(text)
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"需要三个坐标: {text!r}")
    return tuple(values)


def _m_list(text: str) -> List[float]:
    """'M=e10,e50,1e5'：eN 表示 e^N"""
    text = text.split("=", 1)[1] if text.startswith("M=") else text
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(math.exp(float(item[1:])) if item.startswith("e") else float(item))
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"无法解析 M: {item!r}") from e
    return out


def _n_range(text: str) -> List[int]:
    """'2..6' 或 '2,3,4'"""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"无法解析 n 范围: {text!r}") from e


def _box(text: str):
    """'x0,y0,z0:x1,y1,z1'"""
    try:
        lo, hi = text.split(":")
        return Box(_vector(lo), _vector(hi))
    except (ValueError, DomainError, argparse.ArgumentTypeError) as e:
        raise argparse.ArgumentTypeError(f"无法解析长方体: {text!r}") from e


def _box_list(text: str):
    return [_box(item) for item in text.split(";") if item.strip()]


# ==================== 子命令 ====================

def _scheme(args):
    return TruncationScheme(a=args.a, epsilon=args.epsilon, p=args.p, tail_radius=args.tail_radius,
                            tail_policy=args.tail_policy)


def run_field(args):
    field = sample_field(Box.cube(args.half_width), args.intensity, args.seed, args.stream)
    dump = args.dump or str(Path(args.out) / f"field_seed{args.seed}_stream{args.stream}.json")
    Path(dump).parent.mkdir(parents=True, exist_ok=True)
    dump_field(field, dump)
    row = {"count": field.count, "half_width": args.half_width, "intensity": args.intensity,
           "stream": args.stream, "volume": field.window.volume, "dump": dump}
    return row, [row]


def run_potential(args):
    scheme = _scheme(args)
    if args.mgf_theta is not None:
        theta = args.sign * args.mgf_theta
        upper = scheme.tail_radius if scheme.tail_policy == DROP else None
        exact = truncated_mgf_exact(args.mgf_theta, scheme, sign=args.sign, upper=upper)
        est = mgf_monte_carlo(theta, scheme, args.replicates, args.seed, args.threads)
        z = (est.mean - exact) / est.stderr if est.stderr > 0 else math.inf
        row = {"theta": theta, "a": scheme.a, "epsilon": scheme.epsilon,
               "tail_policy": scheme.tail_policy, "exact": exact, "mc_mean": est.mean,
               "mc_stderr": est.stderr, "z": z, "passed": abs(z) <= 3.0}
        return row, [row]
    x = np.asarray(args.point)
    if args.field:
        field = load_field(args.field)
    else:
        half = float(np.max(np.abs(x))) + scheme.tail_radius + 1.0
        field = sample_field(Box.cube(half), scheme.epsilon, args.seed)
    if args.kind == "singular":
        value, tail_std = eval_singular_local(field, x, scheme), 0.0
    else:
        evaluator = eval_truncated_field if args.kind == "truncated" else eval_renormalized
        pv = evaluator(field, x, scheme)
        value, tail_std = pv.value, pv.tail_std
    row = {"kind": args.kind, "x": list(args.point), "value": value, "tail_std": tail_std,
           "points": field.count}
    return row, [row]


def run_fk(args):
    if args.theta is None:
        raise ConfigurationError("fk 需要 --theta", key="theta")
    domain = None
    if args.domain:
        kind, _, size = args.domain.partition(":")
        domain = make_domain(kind, float(size))
    scheme = None if args.planted is not None else _scheme(args)
    cfg = FKConfig(theta=args.theta, t=args.t, dt=args.dt, cap=args.cap, n_paths=args.paths,
                   start=args.start, scheme=scheme, domain=domain, kappa=args.kappa, seed=args.seed)
    if args.planted is not None:
        source = PlantedCluster(args.planted)
    elif args.field:
        source = load_field(args.field)
    else:
        _, t_eff, _ = cfg.effective()
        half = config.FK_ENVELOPE_SIGMAS * math.sqrt(t_eff) + scheme.tail_radius + 1.0
        source = sample_field(Box.cube(half, center=args.start), scheme.epsilon, args.seed)
    if args.caps:
        sweep = cap_sweep(source, args.theta, args.t, args.caps, cfg, args.threads)
        rows = sweep.rows(cfg)
        for row, ratio in zip(rows[1:], sweep.ratios):
            row["ratio"] = ratio
        return {"caps": sweep.caps, "rows": rows, "ratios": sweep.ratios}, rows
    runner = quenched_moment if math.isclose(args.kappa, 0.5) else anderson_moment
    est = runner(source, cfg, args.threads)
    row = cfg.row(est)
    return row, [row]


def run_eigen(args):
    if args.clamps:
        if args.theta is None:
            raise ConfigurationError("截断扫描需要 --theta", key="theta")
        scheme = _scheme(args)
        if args.planted is not None:
            sweep = planted_clamp_sweep(args.theta, args.planted, args.R, args.clamps, scheme,
                                        args.radial_grid_n)
            return sweep.to_dict(), sweep.rows()
        window = Box.cube(args.R + scheme.tail_radius + 1.0)
        field = sample_field(window, scheme.epsilon, args.seed)
        rows = [{"clamp": c, "lambda": eigenvalue_of_field(field, args.theta, args.R, args.grid_n,
                                                           scheme, c)} for c in args.clamps]
        return {"R": args.R, "grid_n": args.grid_n, "rows": rows}, rows
    problem = DirichletProblem(args.R, args.grid_n, args.zeta)
    result = principal_eigenvalue(problem)
    if args.dump_eigenvector:
        Path(args.dump_eigenvector).parent.mkdir(parents=True, exist_ok=True)
        dump_eigenvector(result, args.dump_eigenvector)
    row = result.to_dict()
    row["continuum"] = free_box_eigenvalue(args.R) + args.zeta
    row["grid_n"] = args.grid_n
    return row, [row]


def run_hardy(args):
    if args.gm_sweep:
        rows = [hardy_ratio_gM(M, args.grid_n).to_dict() for M in args.gm_sweep]
        return {"gm_sweep": rows}, rows
    if args.deltas:
        if args.theta is None:
            raise ConfigurationError("H 扫描需要 --theta", key="theta")
        rows = [{"theta": args.theta, "r": args.r, "delta": d,
                 "H": H_functional(args.theta, args.r, d, args.radial_grid_n)} for d in args.deltas]
        if args.validate:
            check = validate_H_functional_3d(args.theta, args.r, args.deltas[0], args.validate_grid_n,
                                             args.radial_grid_n)
            rows[0]["H_ball_mask"] = check.ball_mask
            rows[0]["relative_gap"] = check.relative_gap
        return {"theta": args.theta, "dichotomy": H_dichotomy(args.theta), "rows": rows}, rows
    if args.theta is not None:
        row = {"theta": args.theta, "H": H_dichotomy(args.theta)}
        return row, [row]
    raise ConfigurationError("hardy 需要 --gm-sweep、--deltas 或 --theta 之一", key="mode")


def run_rates(args):
    if args.theta is None:
        raise ConfigurationError("rates 需要 --theta", key="theta")
    l = parse_slowly_varying(args.l)
    verdict = rate_verdict(args.theta, l, args.side, args.kappa)
    out = verdict.to_dict()
    out["l"] = l.label
    out["moment"] = moment_finiteness(args.theta, 0.5 if args.kappa is None else args.kappa)
    if args.t is not None:
        out["t"] = args.t
        out["normalization"] = predicted_normalization(args.theta, l, args.t, args.side, args.kappa)
    row = {k: v for k, v in out.items() if k != "integral_test"}
    return out, [row]


def run_extremes(args):
    result = extreme_scaling_experiment(args.n_range, args.delta, args.r, args.replicates,
                                        args.seed, args.threshold, args.threads)
    return result.to_dict(), result.table


def run_association(args):
    if not args.cells or not args.thresholds:
        raise ConfigurationError("association 需要 --cells 与 --thresholds", key="cells")
    result = check_association(Box.cube(args.half_width), args.intensity, args.cells,
                               args.thresholds, args.direction, args.replicates, args.seed,
                               args.threads)
    row = {"joint": result.joint.mean, "stderr": result.joint.stderr, "product": result.product,
           "passed": result.passed}
    return result.to_dict(), [row]


def run_exit_check(args):
    result = exit_lower_bound_check(args.R, args.t, args.target, args.replicates, args.seed,
                                    args.dt, args.threads)
    row = {"R": result.R, "t": result.t, "dt": result.dt, "lhs": result.lhs.mean,
           "lhs_stderr": result.lhs.stderr, "rhs": result.rhs.mean,
           "rhs_stderr": result.rhs.stderr, "passed": result.passed}
    return result.to_dict(), [row]


# ==================== 解析器 ====================

def _common_parser() -> argparse.ArgumentParser:
    common = LabArgumentParser(add_help=False)
    common.add_argument("--config", help="INI 配置文件（[common] 与子命令同名小节）")
    common.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out", default=config.OUTPUT_DIR, help="结果目录")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--log-level", default=config.LOG_LEVEL)
    common.add_argument("--log-file", default=config.LOG_FILE)
    return common


def _scheme_args(p: argparse.ArgumentParser):
    p.add_argument("--a", type=float, default=1.0, help="截断半径")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--tail-radius", type=float, default=None)
    p.add_argument("--tail-policy", choices=("drop", "gaussian_surrogate"), default="drop")


def build_parser() -> LabArgumentParser:
    parser = LabArgumentParser(prog="critical_lab", description="临界泊松势数值实验室")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    common = [_common_parser()]

    p = sub.add_parser("field", parents=common, help="采样并写出泊松点场")
    p.add_argument("--half-width", type=float, default=10.0)
    p.add_argument("--intensity", type=float, default=1.0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--dump", default=None)
    p.set_defaults(handler=run_field)

    p = sub.add_parser("potential", parents=common, help="单点求值或 MGF 检验")
    _scheme_args(p)
    p.add_argument("--point", type=_vector, default=(0.0, 0.0, 0.0))
    p.add_argument("--kind", choices=("renormalized", "truncated", "singular"), default="renormalized")
    p.add_argument("--field", default=None, help="读入已写出的点场")
    p.add_argument("--mgf-theta", type=float, default=None)
    p.add_argument("--sign", type=int, choices=(1, -1), default=1)
    p.add_argument("--replicates", type=int, default=2000)
    p.set_defaults(handler=run_potential)

    p = sub.add_parser("fk", parents=common, help="淬火矩或截断值扫描")
    _scheme_args(p)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--cap", type=float, default=1e4)
    p.add_argument("--caps", type=_float_list, default=None)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--start", type=_vector, default=(0.0, 0.0, 0.0))
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--planted", type=int, default=None, help="原点处 m 个重合点")
    p.add_argument("--field", default=None)
    p.add_argument("--domain", default=None, help="ball:R 或 box:R")
    p.set_defaults(handler=run_fk)

    p = sub.add_parser("eigen", parents=common, help="盒子主特征值或点场截断扫描")
    _scheme_args(p)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--grid-n", type=int, default=31)
    p.add_argument("--zeta", type=float, default=0.0, help="常数势")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--clamps", type=_float_list, default=None)
    p.add_argument("--planted", type=int, default=None, help="原点处 m 个重合点，扫描走径向约化")
    p.add_argument("--radial-grid-n", type=int, default=4000)
    p.add_argument("--dump-eigenvector", default=None)
    p.set_defaults(handler=run_eigen)

    p = sub.add_parser("hardy", parents=common, help="g_M 比值或 H_{r,δ}(θ) 扫描")
    p.add_argument("--gm-sweep", type=_m_list, default=None, help="如 M=e10,e50")
    p.add_argument("--grid-n", type=int, default=100000)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--deltas", type=_float_list, default=None)
    p.add_argument("--radial-grid-n", type=int, default=4000)
    p.add_argument("--validate", action="store_true")
    p.add_argument("--validate-grid-n", type=int, default=63)
    p.set_defaults(handler=run_hardy)

    p = sub.add_parser("rates", parents=common, help="k、指数与 0/∞ 分支")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--l", default="const", help="const | logpow:a | loglogpow:a | logxloglogpow:a | table:PATH")
    p.add_argument("--side", choices=("limsup", "liminf"), default="limsup")
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--t", type=float, default=None)
    p.set_defaults(handler=run_rates)

    p = sub.add_parser("extremes", parents=common, help="格点极值尺度实验")
    p.add_argument("--n-range", type=_n_range, default=[2, 3, 4])
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--r", type=float, default=1.5)
    p.add_argument("--threshold", type=int, default=3)
    p.add_argument("--replicates", type=int, default=1000)
    p.set_defaults(handler=run_extremes)

    p = sub.add_parser("association", parents=common, help="关联不等式检验")
    p.add_argument("--half-width", type=float, default=5.0)
    p.add_argument("--intensity", type=float, default=1.0)
    p.add_argument("--cells", type=_box_list, default=None, help="x0,y0,z0:x1,y1,z1;...")
    p.add_argument("--thresholds", type=_float_list, default=None)
    p.add_argument("--direction", default=">=")
    p.add_argument("--replicates", type=int, default=10000)
    p.set_defaults(handler=run_association)

    p = sub.add_parser("exit-check", parents=common, help="桥式出界下界检验")
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--target", type=_box, default="-0.5,-0.5,-0.5:0.5,0.5,0.5")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--replicates", type=int, default=20000)
    p.set_defaults(handler=run_exit_check)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise ConfigurationError(f"未知子命令: {command}")


def apply_config_file(parser: argparse.ArgumentParser, command: str, path: str):
    """把配置文件中 [common] 与 [command] 小节设为默认值，命令行参数优先"""
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise ConfigurationError(f"无法读取配置文件: {path}", key="config")
    for section in cp.sections():
        if section != "common" and section not in COMMANDS:
            raise ConfigurationError(f"未知配置小节: [{section}]", key=section)
    sub = _subparser(parser, command)
    # configparser 会把键转成小写，按小写匹配（如 --R）
    actions = {a.dest.lower(): a for a in sub._actions if a.dest not in ("help", "handler", "config")}
    values = {}
    for section in ("common", command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_").lower()
            if dest not in actions:
                raise ConfigurationError(f"未知配置键 [{section}] {key}", key=key)
            action = actions[dest]
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    value = cp.getboolean(section, key)
                elif action.type is not None:
                    value = action.type(raw)
                else:
                    value = raw
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise ConfigurationError(f"配置键 {key} 的值无效: {raw!r}", key=key) from e
            if action.choices is not None and value not in action.choices:
                raise ConfigurationError(f"配置键 {key} 取值须在 {list(action.choices)} 中", key=key)
            values[action.dest] = value
    sub.set_defaults(**values)
    logger.debug(f"配置文件 {path} 覆盖默认值: {sorted(values)}")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        apply_config_file(parser, args.command, args.config)
        args = parser.parse_args(argv)
    return args


def setup_logging(level: str, log_file: Optional[str]):
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format=config.LOG_FORMAT, handlers=handlers, force=True)


# ==================== 主程序 ====================

def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    try:
        args = parse_args(argv)
        setup_logging(args.log_level, args.log_file)
        config.print_config()
        logger.info(f"子命令 {args.command}，种子 {args.seed}")
        result, rows = args.handler(args)
        params = {k: v for k, v in vars(args).items() if k not in _RUNTIME_KEYS}
        record = ExperimentRecord(subcommand=args.command, params=params, seed=args.seed,
                                  result=result)
        path = ExperimentRecorder(args.out).save(record, args.format, rows=rows)
        sys.stdout.write(Path(path).read_text(encoding="utf-8"))
        return EXIT_OK
    except (LabError, ValueError) as e:
        code = exit_code_for(e)
        logger.error(f"运行失败 (退出码 {code}): {e}")
        print(f"error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
