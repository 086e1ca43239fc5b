from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Tuple
import logging

import numpy as np

from app.core.errors import MissingMeta
from app.models.domain import Camera, PosePair, PseudoFrame
from app.models.schemas import OracleConfig

logger = logging.getLogger(__name__)

class BasePseudoFrameOracle(ABC):
    """Base class for every pseudo-frame provider"""

    def __init__(self, config: OracleConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.name = self.__class__.__name__
        self.generated = 0

    def _rng(self, frame_id: int, factor: int) -> np.random.Generator:
        """Per-frame generator, independent of call order"""
        return np.random.default_rng([self.seed, frame_id, factor])

    @abstractmethod
    def generate_pseudo(
        self,
        bracket: Tuple[int, int],
        pair: PosePair,
        camera: Camera,
        factor: int = 1,
        frame_id: Optional[int] = None,
        cfg: Optional[OracleConfig] = None,
    ) -> PseudoFrame:
        """Mid-frame between the bracketing training frames at 1/factor resolution"""
        pass

    def oracle_error_mask(self, pseudo: PseudoFrame) -> np.ndarray:
        """Pixels where corruption was injected (test-side ground truth)"""
        if pseudo.meta is None or pseudo.meta.error_mask is None:
            raise MissingMeta(f"pseudo-frame {pseudo.frame_id} carries no oracle metadata")
        return pseudo.meta.error_mask.copy()

    def get_oracle_stats(self) -> Dict[str, Any]:
        return {
            "oracle_name": self.name,
            "preset": self.config.preset.value if self.config.preset else "custom",
            "hidden_s": self.config.hidden_s,
            "generated": self.generated,
        }
