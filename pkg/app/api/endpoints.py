from fastapi import APIRouter, HTTPException
import logging
import os
import uuid
from datetime import datetime

from ..core.config import settings
from ..core.exceptions import EXIT_NUMERIC, VolFilterError
from ..db.table_store import load_table
from ..io.config_file import parse_config
from ..schemas.request_response import FilterRequest, FilterResponse
from ..services.filter_engine import FilterService, posterior_mean
from ..services.model_core import Tick

logger = logging.getLogger(__name__)

router = APIRouter()


def _table_path(name: str) -> str:
    """Resolve ``paths.table`` inside TABLE_DIR; anything outside it is rejected."""
    root = os.path.realpath(settings.TABLE_DIR)
    path = os.path.realpath(os.path.join(root, name))
    if os.path.commonpath([root, path]) != root:
        raise HTTPException(status_code=400, detail=f"paths.table {name!r} is outside the table directory")
    return path


@router.post("/filter", response_model=FilterResponse)
async def filter_ticks(request: FilterRequest):
    """
    Filter a tick stream against the model and table named in the config.
    """
    try:
        setup = parse_config(request.config)
        if not setup.config.paths.table:
            raise HTTPException(status_code=400, detail="config has no paths.table")
        table = load_table(_table_path(setup.config.paths.table), setup.chain, setup.model, setup.policy)
        service = FilterService(
            setup.chain,
            setup.model,
            setup.policy,
            table,
            rk4_step=setup.config.filter.rk4_step,
            fallback=setup.config.filter.fallback,
        )
        ticks = [Tick(time=tick.time, logprice=tick.log_price) for tick in request.ticks]
        trajectory = service.filter_ticks(ticks, probe_every=request.probe_every, ticks_only=request.ticks_only)

        return {
            "states": setup.chain.states.tolist(),
            "trajectory": [
                {
                    "time": point.time,
                    "kind": point.kind,
                    "posterior": point.posterior.pi.tolist(),
                    "volatility_estimate": posterior_mean(point.posterior, setup.chain),
                }
                for point in trajectory
            ],
            "warnings": service.last_warnings,
            "request_id": str(uuid.uuid4()),
            "timestamp": datetime.now().isoformat(),
        }

    except HTTPException:
        raise
    except VolFilterError as e:
        status = 422 if e.exit_code == EXIT_NUMERIC else 400
        raise HTTPException(status_code=status, detail=str(e))
    except OSError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Unexpected error while filtering: {e}")
        raise HTTPException(status_code=500, detail=str(e))
