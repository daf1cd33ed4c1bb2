import os
import sys

# Timing runs use one BLAS thread; set before numpy is imported.
if len(sys.argv) > 1 and sys.argv[1] == "bench":
    for variable in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(variable, "1")

from app.commands import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
