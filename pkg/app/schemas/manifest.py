"""
Pydantic schema for run manifests.

A manifest is written next to the outputs of every CLI run. It holds no wall
clock time so that identical runs produce identical manifests.
"""

from typing import Any

from pydantic import BaseModel, Field


class RunManifest(BaseModel):
    """Resolved inputs, configuration and outputs of one CLI run."""
    subcommand: str
    tool_version: str
    seed: int | None = None
    config: dict[str, Any] = Field(default_factory=dict)
    inputs: dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    outputs: list[str] = Field(default_factory=list)
