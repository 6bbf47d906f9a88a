'''
Run configuration: one JSON file per run, validated by pydantic, with CLI overrides.
'''
import os, json, logging
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from chatintent.errors import ConfigError
from chatintent.generation import Variant, VARIANT_ORDER
from chatintent.llm_gateway import GatewayConfig
from chatintent.longformer_plus import ModelConfig
from chatintent.synth_corpus import GenSpec
from chatintent.training import TrainOptions, GRID_AXES

log = logging.getLogger(__name__)

STAGES = ("synth", "train", "classify-eval", "generate", "judge", "report", "probe")
PIPELINE_STAGES = ("synth", "train", "classify-eval", "generate", "judge", "report")


class PathsConfig(BaseModel):
    '''
    Input overrides and output location. Relative paths resolve against the config file's
    directory. Artifacts left unset live in `<output_dir>/<run_id>/`.
    '''
    model_config = ConfigDict(frozen = True, extra = "forbid")

    output_dir: str = "runs"
    corpus: Optional[str] = None
    vocab: Optional[str] = None
    checkpoint: Optional[str] = None
    fixtures: Optional[str] = None
    golden_report: Optional[str] = None
    human_labels: Optional[str] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen = True, extra = "forbid")

    run_id: str = "default"
    paths: PathsConfig = Field(default_factory = PathsConfig)
    gen_spec: GenSpec = Field(default_factory = GenSpec)
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    vocab_min_freq: int = Field(1, ge = 1)
    model: Dict[str, Any] = Field(default_factory = dict)
    train: TrainOptions = Field(default_factory = TrainOptions)
    grid: Optional[Dict[str, List[Any]]] = None
    generator: GatewayConfig
    judge: GatewayConfig
    judge_template: str = "judge_v1"
    baseline: List[GatewayConfig] = Field(default_factory = list)
    variants: List[str] = Field(default_factory = lambda: [v.value for v in VARIANT_ORDER])
    M: int = Field(5, ge = 1)
    report_m: List[int] = Field(default_factory = lambda: [1, 5])
    probe_sessions: int = Field(400, ge = 10)
    seed: int = 0
    lexicon: Optional[Dict[str, List[str]]] = None

    @field_validator("run_id")
    @classmethod
    def _check_run_id(cls, value):
        if not value or os.sep in value or value in (".", ".."):
            raise ValueError("run_id must be a plain directory name, got `%s`" % (value))
        return value

    @field_validator("model")
    @classmethod
    def _check_model(cls, value):
        if "vocab_size" in value:
            raise ValueError("model.vocab_size is taken from the built vocabulary and must not be set")
        ModelConfig.model_validate(dict(value, vocab_size = 5))
        return value

    @field_validator("grid")
    @classmethod
    def _check_grid(cls, value):
        if value is not None:
            unknown = set(value) - set(k for k, _ in GRID_AXES)
            if unknown:
                raise ValueError("Unknown grid axes: %s" % (sorted(unknown)))
        return value

    @field_validator("variants")
    @classmethod
    def _check_variants(cls, value):
        if not value:
            raise ValueError("variants must not be empty")
        for name in value:
            Variant.from_name(name)
        return value

    @field_validator("report_m")
    @classmethod
    def _check_report_m(cls, value):
        if not value or any(m < 1 for m in value):
            raise ValueError("report_m must be a non-empty list of positive integers")
        return value

    @model_validator(mode = "after")
    def _check_ratios(self):
        if any(r <= 0 for r in self.split_ratios) or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split_ratios must be three positive fractions summing to 1")
        return self

    def input_limits(self):
        '''
        (max_pages, max_attr_tokens, max_tokens) of the configured model.
        '''
        fields = ModelConfig.model_fields
        return tuple(self.model.get(name, fields[name].default) for name in ("max_pages", "max_attr_tokens", "max_tokens"))

    def model_config_for(self, vocab_size):
        return ModelConfig.model_validate(dict(self.model, vocab_size = vocab_size))

    def selected_variants(self):
        '''
        Configured variants in canonical order.
        '''
        chosen = set(Variant.from_name(v) for v in self.variants)
        return [v for v in VARIANT_ORDER if v in chosen]

    ####################
    # Override methods #
    ####################

    def with_seed(self, seed):
        '''
        Copy with every seed (corpus, split, model init, training, prompt shuffle) set to `seed`.
        '''
        return self.model_copy(update = {"seed": seed,
                                         "gen_spec": self.gen_spec.model_copy(update = {"seed": seed}),
                                         "model": dict(self.model, seed = seed),
                                         "train": self.train.model_copy(update = {"seed": seed})})

    def with_endpoint(self, endpoint):
        '''
        Copy with the generator, judge and baseline gateways pointed at `endpoint`.
        '''
        return self.model_copy(update = {"generator": self.generator.model_copy(update = {"endpoint": endpoint}),
                                         "judge": self.judge.model_copy(update = {"endpoint": endpoint}),
                                         "baseline": [b.model_copy(update = {"endpoint": endpoint}) for b in self.baseline]})


def load_run_config(fp_config, seed = None, endpoint = None):
    '''
    Read and validate a JSON run configuration.
    Params:
     - fp_config: path to the JSON file
     - seed: optional override of every seed
     - endpoint: optional override of every gateway endpoint
    Returns (RunConfig, directory relative paths resolve against).
    '''
    if not os.path.isfile(fp_config):
        raise ConfigError("Error reading config: Unable to find '%s'." % (fp_config))
    try:
        with open(fp_config, "r", encoding = "utf-8") as fh_config:
            raw = json.load(fh_config)
    except ValueError as err:
        raise ConfigError("Error while parsing config `%s`: `%s`" % (fp_config, str(err)))
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError("Error while validating config `%s`: `%s`" % (fp_config, str(err)))
    if seed is not None:
        config = config.with_seed(seed)
    if endpoint is not None:
        config = config.with_endpoint(endpoint)
    log.debug("Loaded config `%s` (run `%s`)." % (fp_config, config.run_id))
    return config, os.path.dirname(os.path.abspath(fp_config))
