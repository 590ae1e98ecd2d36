"""
API endpoints for scoring with the served model.
"""

import logging
from datetime import timezone

import numpy as np
from fastapi import APIRouter, Depends, HTTPException, Request, status

from app.core.errors import EngageError
from app.schemas.config import SessionizerConfig
from app.schemas.scoring import (
    HistoryRequest,
    HistoryResponse,
    ModelInfo,
    ScoreRequest,
    ScoreResponse,
)
from app.services.featurizer import compute_features
from app.services.ingest import AnnotationEvent, validate_log
from app.services.models import SCHEMA_VERSION, TrainedModel
from app.services.sessionizer import sessionize


logger = logging.getLogger(__name__)

router = APIRouter(tags=["scoring"])


def get_model(request: Request) -> TrainedModel:
    """Model loaded at startup; 503 when the service runs without one."""
    model = getattr(request.app.state, "model", None)
    if model is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="No model loaded (set ENGAGE_MODEL_PATH or use 'serve --model')",
        )
    return model


@router.get(
    "/model",
    response_model=ModelInfo,
    summary="Describe the served model"
)
def model_info(model: TrainedModel = Depends(get_model)) -> ModelInfo:
    dataset_config = model.dataset_config
    return ModelInfo(
        variant=model.variant.value,
        M=model.M,
        gamma=dataset_config.gamma if dataset_config else None,
        emit_policy=dataset_config.emit_policy.value if dataset_config else None,
        schema_version=SCHEMA_VERSION,
    )


@router.post(
    "/score",
    response_model=ScoreResponse,
    summary="Score raw feature vectors"
)
def score_vectors(
    payload: ScoreRequest,
    model: TrainedModel = Depends(get_model)
) -> ScoreResponse:
    """
    Score feature vectors built by the caller.

    **Each item:**
    - deltas: M time deltas in seconds, oldest first
    - engineered: the seven features f1..f7
    """
    for item in payload.items:
        if len(item.deltas) != model.M:
            raise HTTPException(
                status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                detail=f"expected {model.M} deltas, got {len(item.deltas)}"
            )
    matrix = np.array([item.deltas + item.engineered for item in payload.items], dtype=np.float64)
    try:
        scores = model.score_matrix(matrix)
    except EngageError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.message)
    return ScoreResponse(scores=[float(s) for s in scores])


@router.post(
    "/score/history",
    response_model=HistoryResponse,
    summary="Score the latest annotation of a volunteer history"
)
def score_history(
    payload: HistoryRequest,
    model: TrainedModel = Depends(get_model)
) -> HistoryResponse:
    """
    Sessionize one volunteer's history and score its most recent annotation.

    The score is the probability that the volunteer makes more than gamma
    further annotations in the current session.
    """
    events = [
        AnnotationEvent(
            user_id=payload.user_id,
            logged_in=event.logged_in,
            timestamp=(
                event.timestamp.replace(tzinfo=timezone.utc)
                if event.timestamp.tzinfo is None
                else event.timestamp.astimezone(timezone.utc)
            ).replace(microsecond=0),
            annotation_id=event.annotation_id,
        )
        for event in payload.events
    ]
    try:
        log = validate_log(events)
        sessions = sessionize(log.users[payload.user_id], SessionizerConfig.from_minutes(payload.gap_minutes))
        last = sessions[-1]
        position = len(last) - 1
        deltas, engineered = compute_features(sessions, last.session_index, position, model.M)
        score = float(model.score_matrix(np.concatenate([deltas, engineered])[np.newaxis, :])[0])
    except EngageError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.message)

    logger.info(f"Scored history of {payload.user_id}: {score:.4f}")
    return HistoryResponse(
        user_id=payload.user_id,
        score=score,
        session_index=last.session_index,
        position=position,
        deltas=deltas.tolist(),
        engineered=engineered.tolist(),
    )
