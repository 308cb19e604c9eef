"""
Experiment configuration: YAML files validated against a pydantic schema.

Sweeps are written as value lists; :func:`expand` turns list-valued fields into the
cartesian product of concrete settings. Validation problems are reported one per line
as ``<field path> (line N): <message>``.
"""
import itertools
import math
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .codebook import MAX_CODEBOOK_SIZE
from .errors import ConfigError

SCHEMA_VERSION = 1
IntOrList = Union[int, List[int]]

EXPERIMENTS = ("wideband_vector", "projection", "subband", "overall", "bounds",
               "spectral_efficiency")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ArraySpec(_Strict):
    n_h: int = Field(8, ge=1)
    n_v: int = Field(2, ge=1)
    n_p: Literal[1, 2] = 2
    spacing: float = Field(0.5, gt=0)

    @property
    def n_t(self):
        return self.n_h * self.n_v * self.n_p


class ChannelSpec(_Strict):
    n_clusters: int = Field(8, ge=1)
    rays_per_cluster: int = Field(10, ge=1)
    angle_spread_deg: float = Field(4.0, ge=0)
    delay_spread_s: float = Field(300e-9, ge=0)
    bandwidth_hz: float = Field(18e6, gt=0)
    n_subbands: int = Field(30, ge=1)
    indoor_attenuation: float = Field(0.0, ge=0, lt=1)
    sector_deg: float = Field(120.0, gt=0)
    elevation_spread_deg: float = Field(6.0, ge=0)


class CodebookSpec(_Strict):
    """Wideband basis codebook.

    ``tsodft``: oversampled DFT per array dimension with total oversampling
    ``oversampling = o_h * o_v`` (a power of two, split as evenly as possible with
    ``o_h >= o_v`` unless ``o_h``/``o_v`` are given). ``lloyd``: ``2**bits`` words
    trained on eigenvectors of users outside the evaluation set.
    """

    kind: Literal["tsodft", "lloyd"] = "tsodft"
    oversampling: IntOrList = 16
    o_h: Optional[int] = Field(None, ge=1)
    o_v: Optional[int] = Field(None, ge=1)
    bits: IntOrList = 8
    iters: int = Field(30, ge=0)
    train_users: int = Field(100, ge=1)
    train_seed: int = 1


class QuantizerSpec(_Strict):
    scheme: Literal["exact", "ext2", "int5", "pcb"]
    m: IntOrList = 0
    b_l: IntOrList = 3
    b_s: IntOrList = 2
    n_l: IntOrList = 2
    n_b: IntOrList = 6
    phase_bits: IntOrList = 0
    component: Literal["vector", "line"] = "vector"
    component_seed: int = 1
    rule: Literal["exact", "nearest"] = "exact"


class WidebandSpec(_Strict):
    schemes: List[Literal["ideal", "ind", "owp", "swp"]] = ["owp"]
    pol_modes: List[Literal["full", "bplus_bminus", "b00b"]] = ["b00b"]
    codebooks: List[CodebookSpec] = [CodebookSpec()]
    on_degenerate: Literal["error", "next"] = "next"
    pinv: bool = True


class PipelineSpec(_Strict):
    wideband: Literal["ideal", "ind", "owp", "swp"]
    subband: QuantizerSpec
    pol_mode: Literal["full", "bplus_bminus", "b00b"] = "b00b"
    codebook: CodebookSpec = CodebookSpec()


class ZFSpec(_Strict):
    users: int = Field(4, ge=1)
    snr_db: List[float] = [0.0, 10.0, 20.0]
    drops: int = Field(100, ge=1)
    power: float = Field(1.0, gt=0)


class OutputSpec(_Strict):
    dir: str = "out"
    emit: Literal["csv", "json", "both"] = "both"


class ExperimentConfig(_Strict):
    experiment: Literal[EXPERIMENTS]
    seed: int = Field(7, ge=0)
    users: int = Field(200, ge=1)
    k: int = Field(8, ge=1)
    array: ArraySpec = ArraySpec()
    channel: ChannelSpec = ChannelSpec()
    wideband: WidebandSpec = WidebandSpec()
    subband: List[QuantizerSpec] = []
    pipelines: List[PipelineSpec] = []
    zf: ZFSpec = ZFSpec()
    perfect_csi: bool = True
    output: OutputSpec = OutputSpec()


# ------------------------------------------------------------------ expansion

def as_list(v):
    return list(v) if isinstance(v, list) else [v]


def expand(spec):
    """Concrete copies of a spec, one per combination of its list-valued fields."""
    data = spec.model_dump()
    keys = [k for k, v in data.items() if isinstance(v, list)]
    out = []
    for combo in itertools.product(*(data[k] for k in keys)):
        d = dict(data)
        d.update(zip(keys, combo))
        out.append(type(spec)(**d))
    return out


def oversampling_split(omega, o_h=None, o_v=None, dims=(2, 2)):
    """Per-dimension oversampling ``(o_h, o_v)`` with ``o_h * o_v = omega``.

    A dimension with a single element gets no oversampling; otherwise ``omega`` is split
    as evenly as possible with ``o_h >= o_v``.
    """
    if o_h and o_v:
        return o_h, o_v
    n = int(round(math.log2(omega)))
    if 2 ** n != omega:
        raise ValueError(f"oversampling {omega} is not a power of two")
    n_h, n_v = dims
    if n_v == 1:
        return omega, 1
    if n_h == 1:
        return 1, omega
    o_v = 2 ** (n // 2)
    return omega // o_v, o_v


def codebook_size(cb, array, pol_mode):
    if cb.kind == "lloyd":
        return 2 ** cb.bits
    o_h, o_v = oversampling_split(cb.oversampling, cb.o_h, cb.o_v, (array.n_h, array.n_v))
    size = array.n_h * o_h * array.n_v * o_v
    if pol_mode == "full" and array.n_p == 2:
        size *= 4
    return size


def all_pipelines(cfg):
    """Explicit pipelines if given, else wideband x pol x codebook x quantizer product."""
    if cfg.pipelines:
        out = []
        for p in cfg.pipelines:
            for cb in expand(p.codebook):
                for q in expand(p.subband):
                    out.append(PipelineSpec(wideband=p.wideband, subband=q,
                                            pol_mode=p.pol_mode, codebook=cb))
        return out
    quantizers = [q for spec in (cfg.subband or [QuantizerSpec(scheme="exact")])
                  for q in expand(spec)]
    out = []
    for scheme in cfg.wideband.schemes:
        for pol in cfg.wideband.pol_modes:
            for cbs in cfg.wideband.codebooks:
                for cb in expand(cbs):
                    for q in quantizers:
                        out.append(PipelineSpec(wideband=scheme, subband=q, pol_mode=pol,
                                                codebook=cb))
    return out


def _located_pipelines(cfg):
    """``all_pipelines`` with the config locations of each pipeline's parts."""
    if cfg.pipelines:
        for i, p in enumerate(cfg.pipelines):
            loc = ("pipelines", i)
            for cb in expand(p.codebook):
                for q in expand(p.subband):
                    yield (loc + ("pol_mode",), loc + ("codebook",), loc + ("subband",),
                           PipelineSpec(wideband=p.wideband, subband=q, pol_mode=p.pol_mode,
                                        codebook=cb))
        return
    if cfg.subband:
        quantizers = [(("subband", j), q) for j, spec in enumerate(cfg.subband)
                      for q in expand(spec)]
    else:
        quantizers = [(("subband",), QuantizerSpec(scheme="exact"))]
    for scheme in cfg.wideband.schemes:
        for pol in cfg.wideband.pol_modes:
            for i, cbs in enumerate(cfg.wideband.codebooks):
                for cb in expand(cbs):
                    for where_sub, q in quantizers:
                        yield (("wideband", "pol_modes"), ("wideband", "codebooks", i), where_sub,
                               PipelineSpec(wideband=scheme, subband=q, pol_mode=pol,
                                            codebook=cb))


def feasibility_problems(cfg):
    """Cross-field checks that need no computation.

    Returns a list of ``(location, message)`` with ``location`` a field path tuple.
    """
    problems = []
    n_t = cfg.array.n_t
    if cfg.k > n_t:
        problems.append((("k",), f"k = {cfg.k} exceeds N_t = {n_t}"))
    if cfg.zf.users > n_t:
        problems.append((("zf", "users"), f"zf.users = {cfg.zf.users} exceeds N_t = {n_t}"))
    if cfg.experiment == "spectral_efficiency" and cfg.zf.users > cfg.users:
        problems.append((("zf", "users"), f"zf.users = {cfg.zf.users} exceeds users = {cfg.users}"))
    try:
        pipes = list(_located_pipelines(cfg))
    except (ValueError, ValidationError) as err:
        return problems + [((), str(err))]
    for where_pipe, where_cb, where_sub, p in pipes:
        pol = p.pol_mode
        if pol != "full" and (cfg.array.n_p != 2 or cfg.k % 2):
            problems.append((where_pipe, f"pol_mode {pol} needs n_p = 2 and an even k"))
        cb = p.codebook
        try:
            size = codebook_size(cb, cfg.array, pol)
        except ValueError as err:
            problems.append((where_cb, str(err)))
            continue
        if size > MAX_CODEBOOK_SIZE:
            problems.append((where_cb, f"codebook {cb.kind} for {pol} has {size} words "
                                         f"(cap {MAX_CODEBOOK_SIZE})"))
        samples = cb.train_users * (cfg.k // 2 if pol == "b00b" else cfg.k)
        if cb.kind == "lloyd" and size > samples:
            problems.append((where_cb, f"lloyd codebook of {size} words needs at least as "
                                         f"many training vectors (have {samples})"))
        q = p.subband
        if q.scheme in ("ext2", "int5"):
            if q.m > cfg.k - 1:
                problems.append((where_sub, f"{q.scheme}: m = {q.m} exceeds k - 1 = {cfg.k - 1}"))
            if not q.b_l > q.b_s >= 1:
                problems.append((where_sub, f"{q.scheme}: need b_l > b_s >= 1 "
                                            f"(got {q.b_l}, {q.b_s})"))
        if q.scheme == "pcb":
            if q.n_l < 1 or cfg.k % q.n_l:
                problems.append((where_sub, f"pcb: k = {cfg.k} is not divisible by n_l = {q.n_l}"))
            if 2 ** q.n_b > MAX_CODEBOOK_SIZE:
                problems.append((where_sub, f"pcb: n_b = {q.n_b} exceeds the codebook cap"))
    out = []
    for item in problems:
        if item not in out:
            out.append(item)
    return out


# ------------------------------------------------------------------ loading

def _node_line(node, loc):
    """Line (1-based) of the YAML node at a pydantic error location, best effort."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) \
                and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _diagnostics(err, root):
    out = []
    for e in err.errors():
        loc = tuple(x for x in e["loc"] if not (isinstance(x, str) and x.startswith("function-")))
        path = ".".join(str(x) for x in loc) or "<root>"
        line = _node_line(root, loc)
        where = f"{path} (line {line})" if line else path
        out.append(f"{where}: {e['msg']}")
    return out


def parse_config(text, source="<string>"):
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError([f"{source}: invalid YAML: {err}"]) from err
    if not isinstance(data, dict):
        raise ConfigError([f"{source}: top level must be a mapping"])
    try:
        cfg = ExperimentConfig(**data)
    except ValidationError as err:
        raise ConfigError(_diagnostics(err, root)) from err
    problems = feasibility_problems(cfg)
    if problems:
        diags = []
        for loc, msg in problems:
            line = _node_line(root, loc)
            path = ".".join(str(x) for x in loc) or "<root>"
            diags.append(f"{path} (line {line}): {msg}" if line else f"{path}: {msg}")
        raise ConfigError(diags)
    return cfg


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("modcsi.presets").iterdir()
                  if p.name.endswith(".yaml"))


def read_config_text(path_or_preset):
    """Text of a config file, or of a shipped preset when no such file exists."""
    p = Path(path_or_preset)
    if p.is_file():
        return p.read_text(), str(p)
    name = p.name[:-5] if p.name.endswith(".yaml") else p.name
    res = resources.files("modcsi.presets") / f"{name}.yaml"
    if res.is_file():
        return res.read_text(), f"preset:{name}"
    raise ConfigError([f"{path_or_preset}: no such file or preset "
                       f"(presets: {', '.join(preset_names())})"])


def load_config(path_or_preset, seed=None):
    text, source = read_config_text(path_or_preset)
    cfg = parse_config(text, source)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": int(seed)})
    return cfg, text


def dump_config(cfg):
    """Resolved config as YAML; loading it back reproduces the same config."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)
