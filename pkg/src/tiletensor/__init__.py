"""Block-sparse distributed tensor algebra on simulated ranks.

Typical use::

    from tiletensor import IndexSpace, TiledIndexSpace, Tensor, ExecutionContext, Scheduler

    tN = TiledIndexSpace(IndexSpace(100), 10)
    i, j = tN.labels(2, "i j")
    A = Tensor([tN, tN], name="A")
    ec = ExecutionContext(4, "grid")
    Scheduler(ec).allocate(A)(A(i, j).assign(1.0)).execute()
"""

from .context import BlockStore, ExecutionContext, ExecutionStats, default_workers
from .distribution import (
    SCHEMES,
    Distribution,
    GridDistribution,
    MemoryReport,
    Placement,
    ProcessGroup,
    RoundRobinDense,
    RoundRobinSparse,
    effective_grid,
    get_distribution,
    memory_footprint,
    place_grid,
    place_round_robin_dense,
    place_round_robin_sparse,
)
from .index_space import (
    ALPHA,
    BETA,
    IndexSpace,
    TiledIndexLabel,
    TiledIndexSpace,
    is_sub_label_of,
    labels,
    make_index_space,
    subspace,
    tile_custom,
    tile_fixed,
)
from .ops import (
    OpGraph,
    OpKind,
    ScanResult,
    TensorOp,
    allocate_op,
    build_op_graph,
    conflicts,
    deallocate_op,
    from_expression,
    map_op,
    parse_op,
    read_write_sets,
    scan_op,
    validate_add,
    validate_mult,
    validate_set,
)
from .scheduler import Schedule, Scheduler, block_add, block_contract, dump_schedule, enqueue, execute, levelize
from .tensor import (
    BlockId,
    DenseBlock,
    LabeledTensor,
    Tensor,
    Term,
    accumulate_block,
    block_extents,
    dump_tensor,
    get_block,
    is_nonzero,
    label_tensor,
    make_tensor,
    put_block,
    read_dense,
    spin_conservation,
    write_dense,
)

__version__ = "0.1.0"
