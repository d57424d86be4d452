import os
import sys

# Small-matrix BLAS calls are much slower when OpenBLAS oversubscribes the
# two cores of the CI hosts; pin the pools for the whole session.
from threadpoolctl import threadpool_limits

_LIMITS = threadpool_limits(limits=1)

sys.path.insert(0, os.path.dirname(__file__))
