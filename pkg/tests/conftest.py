import sys
from pathlib import Path

import torch

# oracles.py lives next to the tests
sys.path.insert(0, str(Path(__file__).parent))

# keep CPU results reproducible across runs on the same machine
torch.set_num_threads(1)
