# -*- coding: utf-8 -*-
"""
@File    : cli.py
@Description: Multi-subcommand command-line front end (python -m bronchus_idg <command> ...).
"""

# Input: command-line flags, optional TOML config, NIfTI / raw volumes.
# Output: volumes and CSV files on disk, one JSON object on stdout per invocation.
#
# 退出码: 0 成功, 1 I/O 错误, 2 参数/校验错误, 3 计算前置条件不满足。

import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .core.config import IdgConfig, WeightMode, load_idg_config, read_toml_table, settings
from .core.errors import IdgError
from .distance import edt_squared
from .grid import BinaryMask3, Volume3, check_same_shape, normalize_window
from .intensity import airway_intensity_profile
from .loss import bce_map, build_idg_weight_maps, crop_losses, idg_loss
from .metrics import error_intensity_histogram, evaluate_segmentation
from .morphology import connected_components, dilate_cube, skeletonize
from .phantom import PhantomCase, PhantomSpec, generate, pocket_comparison_set, pocket_weight_ratio
from .utils.log_utils import setup_logging
from .utils.parallel import resolve_threads
from .utils.report_utils import emit_json, summarize_weights, write_histogram_csv
from .volio import VolumeHeader, read_volume, write_volume

logger = logging.getLogger("bronchus_idg.cli")

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2


# ==============================================================================
# 参数解析辅助
# ==============================================================================

def _hu_window(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"窗口格式应为 lo:hi, 收到 {text!r}")
    return lo, hi


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要逗号分隔的整数, 收到 {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要逗号分隔的实数, 收到 {text!r}")


def _triple(text: str) -> Tuple[int, int, int]:
    parts = _int_list(text)
    if len(parts) == 1:
        return (parts[0],) * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"需要 1 个或 3 个整数, 收到 {text!r}")
    return tuple(parts)


def _add_idg_flags(p: argparse.ArgumentParser) -> None:
    # 默认值为 None, 表示沿用配置文件或 IdgConfig 的默认值
    p.add_argument("--kernel", type=int, default=None, help="膨胀核大小 s (奇数, 默认 19)")
    p.add_argument("--theta", type=float, default=None, help="难度阈值 θ (默认 1.5)")
    p.add_argument("--w-dila", dest="w_dila", type=float, default=None, help="强度权重幅度 (默认 1.0)")
    p.add_argument("--window", type=_hu_window, default=None, help="HU 窗口 lo:hi, 写作 --window=-1000:600")
    p.add_argument("--skeleton-source", choices=["dilated", "bronchus"], default=None,
                   help="对膨胀区域或原始气道做骨架化 (默认 dilated)")


def _add_mode_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--mode", choices=[m.value for m in WeightMode], default=None, help="权重组合方式")
    group.add_argument("--intensity-only", action="store_true", help="只输出 W^in")
    group.add_argument("--distance-only", action="store_true", help="只输出 W^dis")


def _add_phantom_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", default=None, help="PhantomSpec 的 TOML 文件")
    p.add_argument("--size", type=_triple, default=None, help="网格大小, n 或 nx,ny,nz")
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pockets", type=int, default=None, help="暗口袋个数")
    p.add_argument("--root-radius", type=float, default=None)


def _weight_mode(args: argparse.Namespace) -> Optional[str]:
    if getattr(args, "intensity_only", False):
        return WeightMode.INTENSITY.value
    if getattr(args, "distance_only", False):
        return WeightMode.DISTANCE.value
    return getattr(args, "mode", None)


def _idg_config(args: argparse.Namespace) -> IdgConfig:
    return load_idg_config(
        args.config,
        kernel_size=getattr(args, "kernel", None),
        theta=getattr(args, "theta", None),
        w_dila=getattr(args, "w_dila", None),
        hu_window=getattr(args, "window", None),
        skeleton_source=getattr(args, "skeleton_source", None),
        weight_mode=_weight_mode(args),
    )


def _phantom_spec(args: argparse.Namespace) -> PhantomSpec:
    values: Dict[str, Any] = read_toml_table(args.spec, "phantom") if args.spec else {}
    inline = {
        "grid_size": args.size,
        "depth": args.depth,
        "seed": args.seed,
        "n_confusable_pockets": args.pockets,
        "root_radius": args.root_radius,
    }
    values.update({k: v for k, v in inline.items() if v is not None})
    return PhantomSpec(**values)


def _read_binary(path: str, threshold: float = 0.5) -> BinaryMask3:
    """预测既可以是 0/1 掩码也可以是概率图, 统一按 ≥ threshold 二值化。"""
    volume, _ = read_volume(path)
    return BinaryMask3(volume.shape, volume.data >= threshold)


def _float_header(header: VolumeHeader) -> VolumeHeader:
    return header.model_copy(update={"datatype": "float32", "scl_slope": 1.0, "scl_inter": 0.0})


# ==============================================================================
# 子命令
# ==============================================================================

def cmd_weightmap(args: argparse.Namespace) -> int:
    cfg = _idg_config(args)
    image, header = read_volume(args.image)
    mask, _ = read_volume(args.mask, as_mask=True)
    check_same_shape(image, mask)

    bundle = build_idg_weight_maps(image, mask, cfg, threads=resolve_threads(args.threads))
    write_volume(args.output, bundle.fused, header=_float_header(header))
    emit_json({
        "output": str(args.output),
        "config": {
            "kernel_size": cfg.kernel_size,
            "theta": cfg.theta,
            "w_dila": cfg.w_dila,
            "hu_window": list(cfg.hu_window),
            "weight_mode": cfg.weight_mode.value,
            "skeleton_source": cfg.skeleton_source,
        },
        "weights": summarize_weights(bundle.fused, bundle.region.dilated),
        "inner_voxels": bundle.region.inner.count(),
        "outer_voxels": bundle.region.outer.count(),
        "intensity_model": bundle.model,
    })
    return EXIT_OK


def cmd_loss(args: argparse.Namespace) -> int:
    cfg = _idg_config(args)
    image, _ = read_volume(args.image)
    gt, _ = read_volume(args.gt, as_mask=True)
    pred, _ = read_volume(args.pred)
    check_same_shape(image, gt, pred)

    bce = bce_map(pred, gt, cfg.eps)
    bundle = build_idg_weight_maps(image, gt, cfg, threads=resolve_threads(args.threads))
    result: Dict[str, Any] = {
        "weight_mode": cfg.weight_mode.value,
        "bce_mean": bce.mean(),
        "idg_loss": idg_loss(bce, bundle.fused),
    }
    if args.crop is not None:
        losses = crop_losses(bce, bundle.fused, args.crop, args.overlap)
        result["crop_losses"] = losses
        result["n_crops"] = len(losses)
    emit_json(result)
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    gt, _ = read_volume(args.gt, as_mask=True)
    pred = _read_binary(args.pred)
    skeleton = read_volume(args.gt_skeleton, as_mask=True)[0] if args.gt_skeleton else None
    report = evaluate_segmentation(
        pred,
        gt,
        gt_skeleton=skeleton,
        spacing=gt.shape.spacing,
        bd_threshold=args.bd_threshold,
        largest_cc=not args.no_largest_cc,
    )
    emit_json(report.model_dump())
    return EXIT_OK


def cmd_phantom(args: argparse.Namespace) -> int:
    spec = _phantom_spec(args)
    case = generate(spec, threads=resolve_threads(args.threads))
    write_volume(args.output, case.image, datatype="float32")
    write_volume(args.mask, case.mask)
    if args.pockets_out:
        write_volume(args.pockets_out, case.pockets)
    emit_json({
        "spec": spec.model_dump(mode="json"),
        "branch_count": case.n_segments,
        "airway_voxels": case.mask.count(),
        "pocket_voxels": case.pockets.count(),
    })
    return EXIT_OK


def cmd_edt(args: argparse.Namespace) -> int:
    mask, header = read_volume(args.mask, as_mask=True)
    field_ = edt_squared(mask)
    out = field_.d2 if args.squared else field_.distance
    write_volume(args.output, Volume3(mask.shape, out), header=_float_header(header))
    emit_json({"output": str(args.output), "seeds": mask.count(), "d_max": field_.d_max, "squared": args.squared})
    return EXIT_OK


def cmd_skeleton(args: argparse.Namespace) -> int:
    mask, header = read_volume(args.mask, as_mask=True)
    source = dilate_cube(mask, args.dilate) if args.dilate else mask
    skel = skeletonize(source)
    write_volume(args.output, skel, header=header)
    emit_json({"output": str(args.output), "input_voxels": source.count(), "skeleton_voxels": skel.count()})
    return EXIT_OK


def cmd_components(args: argparse.Namespace) -> int:
    mask, header = read_volume(args.mask, as_mask=True)
    comps = connected_components(mask, args.connectivity)
    if args.largest:
        out = mask.with_data(comps.labels == 1)
        write_volume(args.output, out, header=header)
    else:
        datatype = "int16" if comps.count <= np.iinfo(np.int16).max else "float32"
        labels = Volume3(mask.shape, comps.labels)
        write_volume(args.output, labels, header=_float_header(header), datatype=datatype)
    emit_json({
        "output": str(args.output),
        "count": comps.count,
        "sizes": comps.sizes,
        "largest_only": args.largest,
    })
    return EXIT_OK


def cmd_errorhist(args: argparse.Namespace) -> int:
    cfg = _idg_config(args)
    image, _ = read_volume(args.image)
    gt, _ = read_volume(args.gt, as_mask=True)
    pred = _read_binary(args.pred)
    image_norm = normalize_window(image, *cfg.hu_window)

    hist = error_intensity_histogram(image_norm, pred, gt, bins=args.bins)
    write_histogram_csv(args.output, hist.edges, {"fp_count": hist.fp, "fn_count": hist.fn})
    result: Dict[str, Any] = {
        "output": str(args.output),
        "bins": args.bins,
        "n_fp": int(hist.fp.sum()),
        "n_fn": int(hist.fn.sum()),
    }
    if args.profile:
        profile = airway_intensity_profile(image_norm, gt, bins=args.bins)
        write_histogram_csv(
            args.profile,
            profile["edges"],
            {"airway_count": profile["airway"], "background_count": profile["background"]},
        )
        result["profile"] = str(args.profile)
    emit_json(result)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """s 与 θ 的敏感性分析; 使用合成病例时额外报告暗口袋与对照集合的权重比。"""
    base = _idg_config(args)
    case: Optional[PhantomCase] = None
    if args.image or args.mask:
        if not (args.image and args.mask):
            raise argparse.ArgumentTypeError("--image 与 --mask 需要同时给出")
        image, _ = read_volume(args.image)
        mask, _ = read_volume(args.mask, as_mask=True)
    else:
        case = generate(_phantom_spec(args), threads=resolve_threads(args.threads))
        image, mask = case.image, case.mask

    threads = resolve_threads(args.threads)
    results = []
    for s in args.kernels:
        for theta in args.thetas:
            cfg = IdgConfig(**{**base.model_dump(), "kernel_size": s, "theta": theta})
            logger.info("sweep: s=%d θ=%.3g", s, theta)
            bundle = build_idg_weight_maps(image, mask, cfg, threads=threads)
            stats = summarize_weights(bundle.fused, bundle.region.dilated)
            row: Dict[str, Any] = {
                "kernel_size": s,
                "theta": theta,
                "region_voxels": stats["region_voxels"],
                "region_mean": stats["region_mean"],
                "max": stats["max"],
            }
            if case is not None and bundle.w_dis is not None:
                comparison = pocket_comparison_set(case, bundle.w_dis, bundle.region)
                row["pocket_ratio"] = pocket_weight_ratio(case, bundle.fused, comparison)
            results.append(row)
    emit_json({"weight_mode": base.weight_mode.value, "results": results})
    return EXIT_OK


# ==============================================================================
# 入口
# ==============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bronchus_idg", description="IDG 损失权重图与气道分割评估工具")
    parser.add_argument("--threads", type=int, default=None, help="线程数, 0 为自动 (覆盖 IDG_THREADS)")
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="日志级别 (覆盖 IDG_LOG_LEVEL)")
    parser.add_argument("--config", default=None, help="TOML 配置文件 ([idg] 表或顶层键)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weightmap", help="计算 IDG 融合权重图")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("-o", "--output", required=True)
    _add_idg_flags(p)
    _add_mode_flags(p)
    p.set_defaults(handler=cmd_weightmap)

    p = sub.add_parser("loss", help="计算 BCE 与 IDG 损失")
    p.add_argument("--image", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--crop", type=int, default=None, help="按 crop³ 分块分别计算损失")
    p.add_argument("--overlap", type=int, default=0)
    _add_idg_flags(p)
    _add_mode_flags(p)
    p.set_defaults(handler=cmd_loss)

    p = sub.add_parser("metrics", help="DSC / TD / BD")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt-skeleton", default=None)
    p.add_argument("--bd-threshold", type=float, default=0.8)
    p.add_argument("--no-largest-cc", action="store_true", help="不对预测取最大连通分量")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("phantom", help="生成合成气道树")
    _add_phantom_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--pockets-out", default=None)
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("edt", help="到掩码的精确欧氏距离")
    p.add_argument("--mask", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--squared", action="store_true")
    p.set_defaults(handler=cmd_edt)

    p = sub.add_parser("skeleton", help="3D 细化")
    p.add_argument("--mask", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dilate", type=int, default=None, help="先做 s×s×s 膨胀再细化")
    p.set_defaults(handler=cmd_skeleton)

    p = sub.add_parser("components", help="连通分量标记")
    p.add_argument("--mask", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--connectivity", type=int, choices=[6, 18, 26], default=26)
    p.add_argument("--largest", action="store_true", help="只保留最大分量")
    p.set_defaults(handler=cmd_components)

    p = sub.add_parser("errorhist", help="FP / FN 体素的强度直方图")
    p.add_argument("--image", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--profile", default=None, help="另存气道内/外强度分布 CSV")
    p.add_argument("--window", type=_hu_window, default=None, help="HU 窗口 lo:hi")
    p.set_defaults(handler=cmd_errorhist)

    p = sub.add_parser("sweep", help="s / θ 敏感性分析")
    p.add_argument("--image", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--kernels", type=_int_list, default=[17, 19, 21])
    p.add_argument("--thetas", type=_float_list, default=[1.0, 1.5, 2.0])
    _add_phantom_flags(p)
    _add_idg_flags(p)
    p.add_argument("--mode", choices=[m.value for m in WeightMode], default=None)
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse: --help 退出码 0, 用法错误退出码 2
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(args.log_level or settings.LOG_LEVEL)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except IdgError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except (ValidationError, ValueError, argparse.ArgumentTypeError) as e:
        logger.error("参数错误: %s", e)
        return EXIT_USAGE
    except OSError as e:
        logger.error("I/O 错误: %s", e)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
