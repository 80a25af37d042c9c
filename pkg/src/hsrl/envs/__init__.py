from .blocks import (
    TABLE,
    BlocksAction,
    BlocksState,
    apply_blocks_action,
    blocks_from_json,
    blocks_to_json,
    generate_blocksworld,
    legal_blocks_actions,
    random_blocks_state,
)
from .grid import (
    ACTION_ORDER,
    GridAction,
    GridMap,
    ParseError,
    Plan,
    Position,
    UnsolvableGeneration,
    apply_grid_action,
    bounding_window,
    generate_floorplan,
    generate_maze,
    grid_from_json,
    grid_to_json,
    parse_grid_text,
    replay_plan,
    serialize_grid,
    with_endpoints,
)
from .gtb import GtbMap, generate_gtb, gtb_from_json, gtb_step, gtb_to_json

__all__ = [
    "ACTION_ORDER",
    "BlocksAction",
    "BlocksState",
    "GridAction",
    "GridMap",
    "GtbMap",
    "ParseError",
    "Plan",
    "Position",
    "TABLE",
    "UnsolvableGeneration",
    "apply_blocks_action",
    "apply_grid_action",
    "blocks_from_json",
    "blocks_to_json",
    "bounding_window",
    "generate_blocksworld",
    "generate_floorplan",
    "generate_gtb",
    "generate_maze",
    "grid_from_json",
    "grid_to_json",
    "gtb_from_json",
    "gtb_step",
    "gtb_to_json",
    "legal_blocks_actions",
    "parse_grid_text",
    "random_blocks_state",
    "replay_plan",
    "serialize_grid",
    "with_endpoints",
]
