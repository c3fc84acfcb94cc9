"""
eBIP - 集合贝叶斯交互基元
命令行主程序：simulate / stream / train / infer / evaluate / bench / curve
"""

import argparse
import sys
import traceback
from pathlib import Path
from typing import List, Optional, Sequence

from core.basis import expand_candidates, select_basis
from core.benchmark import ensemble_size_benchmark, runtime_benchmark, sequence_length_benchmark
from core.data_model import check_layout
from core.errors import ConfigurationError, EbipError
from core.evaluator import DEFAULT_FRACTIONS, accuracy_vs_ensemble, kfold_evaluate
from core.interaction_engine import InteractionEngine
from core.model_config import RunConfig, set_run_config
from core.priors import DemonstrationCorpus, estimate_measurement_noise
from core.simulator import generate_corpus, generate_stream
from core.state_manager import FilterKind
from utils.debug_logger import enable_debug, get_debug_logger
from utils.helpers import int_list, parse_name_list
from utils.io_formats import (
    iter_observations,
    read_candidates,
    read_corpus,
    read_demonstration_set,
    read_model,
    read_scenario,
    write_corpus,
    write_curve_csv,
    write_demonstration,
    write_demonstration_set,
    write_json,
    write_model,
    write_observations,
    write_predictions,
)
from utils.report_templates import ReportTemplates

MODEL_FILE = "model.json"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"

DEFAULT_BENCH_DIMS = (64, 128, 256, 512, 1024)
DEFAULT_BENCH_SIZES = (400, 800, 1600)
DEFAULT_BENCH_LENGTHS = (50, 100, 200, 400)
BENCH_SWEEPS = ("dims", "ensemble", "length")
DEFAULT_CURVE_SIZES = (10, 20, 40, 80, 160)


def _load_training(directory: Path):
    """训练目录：model.json + 语料文件"""
    model, noise, _ = read_model(directory / MODEL_FILE)
    corpus = read_corpus(directory)
    check_layout(model.layout, corpus.layout, "语料")
    if corpus.weight_dimension != model.weight_dimension:
        raise ConfigurationError(
            f"语料权重维度 {corpus.weight_dimension} 与模型 {model.weight_dimension} 不一致"
        )
    return model, noise, corpus


def _select_model(config: RunConfig):
    layout, demos = read_demonstration_set(config.paths["corpus"])
    candidates = read_candidates(config.paths.get("candidates"), layout)
    model = select_basis(demos, expand_candidates(layout, candidates), config.ridge)
    return demos, model


def _subsets(values: Optional[Sequence[str]]) -> Optional[List[List[str]]]:
    if not values:
        return None
    return [parse_name_list(v) for v in values]


def cmd_simulate(args, config: RunConfig) -> int:
    """生成 n 次 toy-throw 示教"""
    config.validate_paths("out", *(["scenario"] if "scenario" in config.paths else []))
    scenario = read_scenario(config.paths.get("scenario"))
    if args.count < 0:
        raise ConfigurationError(f"示教数量必须 >= 0: {args.count}")
    demos = generate_corpus(scenario, args.count, config.seed)
    write_demonstration_set(config.paths["out"], demos, scenario.layout, scenario)
    print(f"✅ 已生成 {len(demos)} 次示教: {config.paths['out']}")
    return 0


def cmd_stream(args, config: RunConfig) -> int:
    """生成一条留出观测流，以及对应的真值示教"""
    config.validate_paths("out", *(["scenario"] if "scenario" in config.paths else []))
    scenario = read_scenario(config.paths.get("scenario"))
    fraction = args.fraction[0] if args.fraction else 1.0
    subset = parse_name_list(args.subset[0]) if args.subset else None
    stream, truth = generate_stream(scenario, config.seed, fraction, args.time_scale, subset)

    out = config.paths["out"]
    write_observations(out, stream)
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.demo")
    write_demonstration(truth_path, truth)
    print(f"✅ 观测流 {len(stream)}/{truth.duration} 个时间步: {out}")
    print(f"📄 真值示教: {truth_path}")
    return 0


def cmd_train(args, config: RunConfig) -> int:
    """选择基函数、拟合语料权重并估计 R"""
    config.validate_paths("corpus", "out", *(["candidates"] if "candidates" in config.paths else []))
    demos, model = _select_model(config)
    corpus = DemonstrationCorpus.from_demonstrations(demos, model, config.ridge)
    noise = estimate_measurement_noise(demos, model, corpus.weights)

    out = config.paths["out"]
    write_model(out / MODEL_FILE, model, noise, config.ridge)
    write_corpus(out, corpus)
    print(ReportTemplates.training_summary(model, noise, corpus.size))
    print(f"✅ 模型已保存: {out / MODEL_FILE}")
    return 0


def cmd_infer(args, config: RunConfig) -> int:
    """对观测流逐时间步推理，写出预测流"""
    config.validate_paths("model", "stream", "out")
    model, noise, corpus = _load_training(config.paths["model"])
    observations = iter_observations(config.paths["stream"], model.dof_count)

    engine = InteractionEngine(corpus, model, noise, config)
    result = engine.run(observations, config.horizon)
    write_predictions(config.paths["out"], (o.to_record().to_dict() for o in result["outputs"]))

    session = result["session"]
    print(f"✅ 输出 {len(result['outputs'])} 个时间步，其中 {session.get('measured_ticks', 0)} 个有观测: "
          f"{config.paths['out']}")
    return 0


def cmd_evaluate(args, config: RunConfig) -> int:
    """k 折交叉验证，输出 JSON 报告与文本表格"""
    config.validate_paths("corpus", "out", *(
        name for name in ("candidates", "scenario") if name in config.paths
    ))
    demos, model = _select_model(config)
    scenario = read_scenario(config.paths.get("scenario"))
    methods = parse_name_list(args.methods) or [config.filter_kind.value]
    fractions = args.fraction or list(DEFAULT_FRACTIONS)

    report = kfold_evaluate(
        demos, model, [FilterKind.parse(m) for m in methods], _subsets(args.subset), fractions,
        args.folds, config.seed, config, scenario, args.target,
    )
    out = config.paths["out"]
    write_json(out / REPORT_JSON, report.to_dict())
    table = ReportTemplates.evaluation_table(report)
    (out / REPORT_TEXT).write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_bench(args, config: RunConfig) -> int:
    """运行时间基准：随维度的缩放、随集合大小的更新耗时、整段序列的滤波耗时"""
    if args.sweep == "ensemble":
        sizes = args.sizes or list(DEFAULT_BENCH_SIZES)
        timings = ensemble_size_benchmark(args.dim, sizes, config.filter_kind, args.trials, config.seed)
        payload = {
            "method": config.filter_kind.value,
            "dim": args.dim,
            "ensemble_sizes": list(timings),
            "median_seconds": list(timings.values()),
        }
        text = ReportTemplates.ensemble_timing_table(config.filter_kind.value, args.dim, timings)
    elif args.sweep == "length":
        lengths = args.lengths or list(DEFAULT_BENCH_LENGTHS)
        methods = parse_name_list(args.methods) or [k.value for k in (FilterKind.BIP, FilterKind.EBIP, FilterKind.PF)]
        timings = sequence_length_benchmark(lengths, methods, seed=config.seed, config=config)
        payload = {"lengths": lengths, "total_seconds": timings}
        text = ReportTemplates.sequence_timing_table(lengths, timings)
    else:
        dims = args.dims or list(DEFAULT_BENCH_DIMS)
        report = runtime_benchmark(
            dims, config.ensemble_size or 80, config.filter_kind, args.trials, config.seed, config.process_noise
        )
        payload = report.to_dict()
        text = ReportTemplates.scaling_summary(report)

    if "out" in config.paths:
        write_json(config.paths["out"], payload)
    print(text)
    return 0


def cmd_curve(args, config: RunConfig) -> int:
    """精度/耗时随集合大小变化，CSV 输出"""
    config.validate_paths("corpus", "out", *(
        name for name in ("candidates", "scenario") if name in config.paths
    ))
    demos, model = _select_model(config)
    scenario = read_scenario(config.paths.get("scenario"))
    sizes = args.sizes or list(DEFAULT_CURVE_SIZES)
    fraction = args.fraction[0] if args.fraction else 0.82
    subset = parse_name_list(args.subset[0]) if args.subset else None

    points = accuracy_vs_ensemble(
        demos, model, sizes, config.seed, config, config.filter_kind, fraction, args.folds, scenario, subset
    )
    write_curve_csv(config.paths["out"], [p.to_dict() for p in points])
    print(ReportTemplates.curve_table(points))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "stream": cmd_stream,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "curve": cmd_curve,
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, help="随机种子（所有随机性的唯一来源）")
    parser.add_argument("--out", help="输出路径")
    parser.add_argument("--debug", action="store_const", const=True, help="记录调试会话")
    parser.add_argument("--verbose", "-v", action="store_const", const=True, help="打印逐步进度")


def _add_filter(parser: argparse.ArgumentParser):
    parser.add_argument("--filter", dest="filter_kind", choices=[k.value for k in FilterKind])
    parser.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    parser.add_argument("--process-noise", dest="process_noise", type=float)
    parser.add_argument("--velocity-spread", dest="velocity_spread", type=float, help="初始 φ̇ 的相对标准差下限")
    parser.add_argument("--prior-mode", dest="prior_mode", choices=["direct", "gmm"])
    parser.add_argument("--with-replacement", dest="with_replacement", action="store_const", const=True)
    parser.add_argument("--inflation", type=float)


def _add_training(parser: argparse.ArgumentParser):
    parser.add_argument("--corpus", required=True, help="示教目录")
    parser.add_argument("--candidates", help="候选基函数 JSON")
    parser.add_argument("--ridge", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebip", description="🤝 集合贝叶斯交互基元")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="生成合成示教")
    _add_common(p)
    p.add_argument("--scenario", help="场景 JSON")
    p.add_argument("--count", "-n", type=int, default=50)

    p = sub.add_parser("stream", help="生成留出观测流")
    _add_common(p)
    p.add_argument("--scenario")
    p.add_argument("--fraction", type=float, action="append")
    p.add_argument("--subset", action="append", help="模态子集，如 pose,imu")
    p.add_argument("--time-scale", dest="time_scale", type=float, default=1.0)
    p.add_argument("--truth", help="真值示教路径")

    p = sub.add_parser("train", help="训练基函数模型")
    _add_common(p)
    _add_training(p)

    p = sub.add_parser("infer", help="对观测流推理")
    _add_common(p)
    _add_filter(p)
    p.add_argument("--model", required=True, help="训练输出目录")
    p.add_argument("--stream", required=True, help="NDJSON 观测流")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("evaluate", help="k 折交叉验证")
    _add_common(p)
    _add_filter(p)
    _add_training(p)
    p.add_argument("--scenario")
    p.add_argument("--methods", help="逗号分隔，如 bip,ebip,pf")
    p.add_argument("--subset", action="append")
    p.add_argument("--fraction", type=float, action="append")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--target", default="ball", help="目标模态")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("bench", help="运行时间缩放基准")
    _add_common(p)
    _add_filter(p)
    p.add_argument("--sweep", choices=BENCH_SWEEPS, default="dims", help="dims: 维度缩放；ensemble: 集合大小；length: 序列长度")
    p.add_argument("--dims", type=int_list, help="逗号分隔的权重维度，至少 4 个")
    p.add_argument("--dim", type=int, default=1024, help="ensemble 扫描时固定的权重维度")
    p.add_argument("--sizes", type=int_list, help="ensemble 扫描的集合大小")
    p.add_argument("--lengths", type=int_list, help="length 扫描的序列长度")
    p.add_argument("--methods", help="length 扫描的方法，逗号分隔")
    p.add_argument("--trials", type=int, default=20)

    p = sub.add_parser("curve", help="精度/耗时随集合大小")
    _add_common(p)
    _add_filter(p)
    _add_training(p)
    p.add_argument("--scenario")
    p.add_argument("--sizes", type=int_list, help="逗号分隔的集合大小")
    p.add_argument("--subset", action="append")
    p.add_argument("--fraction", type=float, action="append")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--workers", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_args(args)
        set_run_config(config)
        if config.debug:
            enable_debug(config.debug_dir)
        return COMMANDS[args.command](args, config)

    except EbipError as e:
        get_debug_logger().log_error(type(e).__name__, str(e), {"command": args.command}, traceback.format_exc())
        print(f"❌ [{e.code}] {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ [data_error] {e}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        print("\n👋 已停止", file=sys.stderr)
        return 130
    finally:
        if get_debug_logger().enabled:
            get_debug_logger().save_now()


if __name__ == "__main__":
    sys.exit(main())
