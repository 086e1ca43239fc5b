from pathlib import Path
from typing import Any, Dict, List, Optional
from datetime import datetime
import logging

from app.models.domain import Capture, PseudoFrame
from app.oracles.base_oracle import BasePseudoFrameOracle
from app.services import storage

logger = logging.getLogger(__name__)

def generate_pseudo_set(
    oracle: BasePseudoFrameOracle,
    capture: Capture,
    factor: int,
    cache_dir: Optional[Path] = None,
) -> List[PseudoFrame]:
    """
    One pseudo-frame per adjacent pair of training frames at 1/factor
    resolution; frame_id is the index of the earlier frame
    """
    start_time = datetime.utcnow()
    camera = capture.frames[0].camera
    frames: List[PseudoFrame] = []
    cached = 0

    for k in range(len(capture.frames) - 1):
        pseudo = storage.load_pseudo(cache_dir, k, factor, oracle.config, oracle.seed) if cache_dir else None
        if pseudo is not None:
            cached += 1
        else:
            pseudo = oracle.generate_pseudo((k, k + 1), capture.pose_pair(k), camera, factor=factor, frame_id=k)
            if cache_dir:
                storage.save_pseudo(cache_dir, pseudo, oracle.seed)
        frames.append(pseudo)

    result = get_generation_stats(oracle, len(frames), cached, factor, start_time)
    logger.info(f"Pseudo-frames at 1/{factor}: {result['generated']} generated, {result['cached']} from cache")
    return frames

def get_generation_stats(
    oracle: BasePseudoFrameOracle, total: int, cached: int, factor: int, start_time: datetime
) -> Dict[str, Any]:
    stats = oracle.get_oracle_stats()
    stats.update(
        {
            "factor": factor,
            "generated": total - cached,
            "cached": cached,
            "duration_s": (datetime.utcnow() - start_time).total_seconds(),
        }
    )
    return stats
