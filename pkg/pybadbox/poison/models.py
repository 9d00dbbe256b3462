from typing import Literal
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pybadbox.constants import DEFAULT_POISON_RATE
from pybadbox.trigger.patterns import TriggerSpec


class PoisonConfig(BaseModel):
    """
    How a dataset is poisoned.

    mode 'train' selects round(rate * N) eligible annotations (or images, with
    selection_unit='image'), stamps them and collapses their boxes. mode
    'test_full' stamps every annotation and leaves the ground truth as it is.
    """
    model_config = ConfigDict(frozen=True)

    rate: float = Field(default=DEFAULT_POISON_RATE, ge=0.0, le=1.0, allow_inf_nan=False)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    trigger: TriggerSpec
    mode: Literal['train', 'test_full'] = 'train'
    selection_unit: Literal['annotation', 'image'] = 'annotation'
    drop_degenerate: bool = False


class PoisonManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int
    rate: float
    trigger_digest: str
    source_digest: str
    poisoned_annotation_ids: tuple[int, ...] = ()
    mode: Literal['train', 'test_full'] = 'train'
    selection_unit: Literal['annotation', 'image'] = 'annotation'
    output_digest: str | None = None
    unstamped_annotation_ids: tuple[int, ...] = ()

    @field_validator('poisoned_annotation_ids', 'unstamped_annotation_ids')
    @classmethod
    def ascending(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(sorted(value))

    def to_record(self) -> dict:
        return {
            'seed': self.seed,
            'rate': self.rate,
            'trigger_digest': self.trigger_digest,
            'source_digest': self.source_digest,
            'poisoned_annotation_ids': list(self.poisoned_annotation_ids),
            'mode': self.mode,
            'selection_unit': self.selection_unit,
            'output_digest': self.output_digest,
            'unstamped_annotation_ids': list(self.unstamped_annotation_ids),
        }
