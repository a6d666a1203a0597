from dotenv import load_dotenv
import os

# Load environment variables
load_dotenv()

CVT_THREADS = os.getenv("CVT_THREADS", "1")
CVT_DTYPE = os.getenv("CVT_DTYPE", "float32")
CVT_DEBUG = os.getenv("CVT_DEBUG", "0")
CVT_LOG_LEVEL = os.getenv("CVT_LOG_LEVEL", "WARNING")

if not CVT_THREADS.isdigit() or int(CVT_THREADS) < 1:
    raise ValueError(f"❌ CVT_THREADS must be a positive integer, got {CVT_THREADS!r}. Please check your .env file.")

if CVT_DTYPE not in ("float32", "float64"):
    raise ValueError(f"❌ CVT_DTYPE must be float32 or float64, got {CVT_DTYPE!r}. Please check your .env file.")

THREADS = int(CVT_THREADS)
DTYPE = CVT_DTYPE
DEBUG = CVT_DEBUG.strip().lower() in ("1", "true", "yes", "on")
LOG_LEVEL = CVT_LOG_LEVEL.upper()

# BLAS reads these once, when numpy is first imported
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, str(THREADS))
