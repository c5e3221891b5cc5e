import numpy as np
import pytest

from firl import gridworld as gw


def make_fixture_state(width=5, height=5, doors=((gw.RED, (1, 1)), (gw.GREEN, (3, 1)), (gw.BLUE, (1, 3))),
                       agent=(3, 3), sequence=(gw.RED, gw.GREEN, gw.BLUE), horizon=50,
                       open_flags=None, task=None):
    """Hand-placed GridState for deterministic fixtures (no RNG)."""
    if task is None:
        names = tuple(gw.color_name(c) for c, _ in doors)
        task = gw.TaskConfig(grid_width=width, grid_height=height, colors=names,
                             target_sequence=tuple(gw.color_name(c) for c in sequence),
                             horizon=horizon)
    if open_flags is None:
        open_flags = [False] * len(doors)
    door_objs = tuple(gw.Door(color=c, pos=p, open=o)
                      for (c, p), o in zip(doors, open_flags))
    cells = gw._build_cells(width, height, [p for _, p in doors])
    assert cells[agent[1], agent[0]] == gw.CELL_EMPTY, "agent must start on an empty cell"
    return gw.GridState(width=width, height=height, cells=cells, doors=door_objs,
                        agent_pos=agent, stage=sum(open_flags),
                        target_sequence=tuple(sequence), seed=0, horizon=horizon,
                        task=task)


@pytest.fixture
def default_task():
    return gw.TaskConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
