"""
文件格式
示教、语料、基函数模型、观测/预测流（NDJSON）、场景、候选基函数与评估输出的读写
"""

import io
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import pandas as pd

from core.basis import BasisFamily, BasisModel, default_candidates
from core.data_model import Demonstration, ModalityLayout, Observation, check_layout
from core.errors import DataError, LayoutMismatchError
from core.priors import DemonstrationCorpus
from core.simulator import ScenarioSpec

PathLike = Union[str, Path]

DEMO_SUFFIX = ".demo"
MANIFEST_FILE = "manifest.json"
CORPUS_HEADER_FILE = "corpus_header.json"
CORPUS_WEIGHTS_FILE = "corpus_weights.csv"
CORPUS_LENGTHS_FILE = "corpus_lengths.csv"

JSON_OPTIONS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS


def _json_default(obj: Any) -> Any:
    """orjson 只直接序列化 C 连续数组，切片、转置和 np.diag 视图走这里"""
    if isinstance(obj, np.ndarray):
        return np.ascontiguousarray(obj).tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"无法序列化 {type(obj).__name__}")


def dumps_json(data: Any) -> bytes:
    return orjson.dumps(data, option=JSON_OPTIONS, default=_json_default) + b"\n"


@contextmanager
def _parsing(path: PathLike, what: str):
    """缺字段或类型不对的文件统一报为数据错误"""
    try:
        yield
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise DataError(f"{what} {path} 格式不正确: {type(e).__name__}: {e}")


def read_json(path: PathLike) -> Any:
    try:
        return orjson.loads(Path(path).read_bytes())
    except orjson.JSONDecodeError as e:
        raise DataError(f"无法解析 JSON 文件 {path}: {e}")


def write_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_json(data))
    return path


def _read_csv(source, what: str) -> pd.DataFrame:
    try:
        return pd.read_csv(source, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise DataError(f"无法解析 {what}: {e}")


# 示教

def write_demonstration(path: PathLike, demo: Demonstration) -> Path:
    """第一行为 JSON 头（布局、采样频率、T），其后为以自由度名称为列的 CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "layout": demo.layout.to_dict(),
        "layout_hash": demo.layout.layout_hash(),
        "sample_rate": demo.sample_rate,
        "T": demo.duration,
    }
    frame = pd.DataFrame(demo.samples.T, columns=demo.layout.dof_names())
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(orjson.dumps(header, option=orjson.OPT_SORT_KEYS).decode("utf-8") + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    return path


def read_demonstration(path: PathLike) -> Demonstration:
    text = Path(path).read_text(encoding="utf-8")
    header_line, _, body = text.partition("\n")
    try:
        header = orjson.loads(header_line)
    except orjson.JSONDecodeError as e:
        raise DataError(f"示教文件 {path} 的头部无法解析: {e}")
    with _parsing(path, "示教文件"):
        layout = ModalityLayout.from_dict(header["layout"])
        duration = int(header["T"])
        sample_rate = float(header["sample_rate"])
    frame = _read_csv(io.StringIO(body), f"示教文件 {path}")
    if list(frame.columns) != layout.dof_names():
        raise LayoutMismatchError(f"示教文件 {path} 的列与布局不一致: {list(frame.columns)}")
    if len(frame) != duration:
        raise DataError(f"示教文件 {path} 的行数 {len(frame)} 与头部 T={duration} 不一致")
    return Demonstration(layout, frame.to_numpy(dtype=float).T, sample_rate)


def write_demonstration_set(directory: PathLike, demos: Sequence[Demonstration],
                            layout: ModalityLayout, scenario: Optional[ScenarioSpec] = None) -> Path:
    """示教目录：manifest.json 加上按序号命名的示教文件"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for index, demo in enumerate(demos):
        check_layout(layout, demo.layout, "示教")
        name = f"demo_{index:04d}{DEMO_SUFFIX}"
        write_demonstration(directory / name, demo)
        files.append(name)
    manifest = {
        "count": len(files),
        "files": files,
        "layout": layout.to_dict(),
        "layout_hash": layout.layout_hash(),
        "scenario": scenario.to_dict() if scenario else None,
    }
    return write_json(directory / MANIFEST_FILE, manifest)


def read_demonstration_set(directory: PathLike) -> Tuple[ModalityLayout, List[Demonstration]]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise DataError(f"示教目录 {directory} 缺少 {MANIFEST_FILE}")
    manifest = read_json(manifest_path)
    with _parsing(manifest_path, "示教清单"):
        layout = ModalityLayout.from_dict(manifest["layout"])
        names = [str(name) for name in manifest["files"]]
    demos = [read_demonstration(directory / name) for name in names]
    for demo in demos:
        check_layout(layout, demo.layout, "示教")
    return layout, demos


# 训练产物

def write_model(path: PathLike, model: BasisModel, noise: np.ndarray, ridge: float) -> Path:
    data = model.to_dict()
    data.update({
        "layout_hash": model.layout.layout_hash(),
        "ridge": ridge,
        "measurement_noise": np.diag(noise).tolist() if np.ndim(noise) == 2 else np.asarray(noise).tolist(),
    })
    return write_json(path, data)


def read_model(path: PathLike) -> Tuple[BasisModel, np.ndarray, float]:
    """返回 (模型, R 的对角线, 岭参数)"""
    data = read_json(path)
    with _parsing(path, "模型文件"):
        model = BasisModel.from_dict(data)
        noise = np.asarray(data["measurement_noise"], dtype=float)
        ridge = float(data.get("ridge", 0.0))
        layout_hash = data.get("layout_hash")
    if layout_hash not in (None, model.layout.layout_hash()):
        raise LayoutMismatchError(f"模型文件 {path} 的布局指纹不一致")
    if noise.shape != (model.dof_count,):
        raise DataError(f"模型文件 {path} 中的测量噪声维度 {noise.shape} 与自由度数量不一致")
    return model, noise, ridge


def write_corpus(directory: PathLike, corpus: DemonstrationCorpus) -> Path:
    """JSON 头 (B, N, 布局指纹) + 权重矩阵 CSV + 倒数时长 CSV"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    columns = [f"w{i}" for i in range(corpus.weight_dimension)]
    pd.DataFrame(corpus.weights, columns=columns).to_csv(
        directory / CORPUS_WEIGHTS_FILE, index=False, lineterminator="\n"
    )
    pd.DataFrame({"reciprocal_length": corpus.reciprocal_lengths}).to_csv(
        directory / CORPUS_LENGTHS_FILE, index=False, lineterminator="\n"
    )
    return write_json(directory / CORPUS_HEADER_FILE, {
        "B": corpus.weight_dimension,
        "N": corpus.size,
        "layout": corpus.layout.to_dict(),
        "layout_hash": corpus.layout.layout_hash(),
    })


def read_corpus(directory: PathLike) -> DemonstrationCorpus:
    directory = Path(directory)
    header = read_json(directory / CORPUS_HEADER_FILE)
    with _parsing(directory / CORPUS_HEADER_FILE, "语料头"):
        layout = ModalityLayout.from_dict(header["layout"])
        layout_hash = header["layout_hash"]
        shape = (int(header["N"]), int(header["B"]))
    if layout_hash != layout.layout_hash():
        raise LayoutMismatchError(f"语料 {directory} 的布局指纹不一致")
    with _parsing(directory, "语料"):
        weights = _read_csv(directory / CORPUS_WEIGHTS_FILE, "语料权重").to_numpy(dtype=float).reshape(shape)
        lengths = _read_csv(directory / CORPUS_LENGTHS_FILE, "语料时长")["reciprocal_length"].to_numpy(dtype=float)
    return DemonstrationCorpus(layout, weights, lengths)


# 观测流与预测流

def _nullable(values: np.ndarray) -> List[Optional[float]]:
    return [None if np.isnan(v) else float(v) for v in values]


def write_observations(path: PathLike, observations: Iterable[Observation]) -> Path:
    """每行一条 {tick, values, mask}，无效值写为 null"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        for obs in observations:
            record = {"tick": obs.tick, "values": _nullable(obs.values), "mask": [bool(m) for m in obs.mask]}
            f.write(orjson.dumps(record) + b"\n")
    return path


def iter_observations(path: PathLike, dimension: Optional[int] = None) -> Iterator[Observation]:
    with Path(path).open("rb") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = orjson.loads(line)
                values = np.array([np.nan if v is None else v for v in record["values"]], dtype=float)
                observation = Observation(values, record["mask"], int(record["tick"]))
            except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path} 第 {number} 行无法解析: {e}")
            if dimension is not None and observation.dimension != dimension:
                raise LayoutMismatchError(
                    f"{path} 第 {number} 行的维度 {observation.dimension} 与模型 {dimension} 不一致",
                    observation.tick,
                )
            yield observation


def read_observations(path: PathLike, dimension: Optional[int] = None) -> List[Observation]:
    return list(iter_observations(path, dimension))


def write_predictions(path: PathLike, records: Iterable[Dict[str, Any]]) -> Path:
    """每行一条 {tick, phase_mean, phase_var, y_hat}"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        for record in records:
            f.write(orjson.dumps(record, option=orjson.OPT_SERIALIZE_NUMPY, default=_json_default) + b"\n")
    return path


def read_predictions(path: PathLike) -> List[Dict[str, Any]]:
    with Path(path).open("rb") as f:
        return [orjson.loads(line) for line in f if line.strip()]


# 场景与候选基函数

def read_scenario(path: Optional[PathLike]) -> ScenarioSpec:
    if path is None:
        return ScenarioSpec()
    return ScenarioSpec.from_dict(read_json(path))


def read_candidates(path: Optional[PathLike], layout: ModalityLayout) -> List[List[BasisFamily]]:
    """
    候选基函数 JSON: {"default": [...], "modalities": {"name": [...]}}

    没有文件时所有自由度使用默认候选集。
    """
    if path is None:
        return [default_candidates() for _ in range(layout.total_dofs)]

    data = read_json(path)
    default = [BasisFamily.from_dict(f) for f in data.get("default", [])] or default_candidates()
    per_modality = {
        name: [BasisFamily.from_dict(f) for f in families]
        for name, families in data.get("modalities", {}).items()
    }
    for name in per_modality:
        layout.modality(name)

    result = []
    for modality in layout.modalities:
        families = per_modality.get(modality.name, default)
        result.extend(list(families) for _ in range(modality.dof_count))
    return result


# 评估输出

def write_curve_csv(path: PathLike, rows: Sequence[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False, lineterminator="\n")
    return path
