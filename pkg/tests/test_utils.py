import importlib
import os
import sys


def spike_dir(spike_name):
    # This file is in tests/test_utils.py
    current_dir = os.path.dirname(os.path.abspath(__file__))
    project_root = os.path.dirname(current_dir)
    return os.path.join(project_root, "spikes", spike_name)


def load_spike_module(spike_name, module_name):
    """
    Load a module from a spike directory.

    The spike modules import each other by plain name (``from errors import ...``),
    so the spike directory stays on sys.path and every module is imported under
    its own name. This keeps a single class object per exception and dataclass
    no matter which test file loads it first.

    Args:
        spike_name: Name of the spike directory (e.g., "009_ssf_mortality")
        module_name: Name of the module file without .py (e.g., "rules")

    Returns:
        The loaded module.
    """
    directory = spike_dir(spike_name)
    module_path = os.path.join(directory, f"{module_name}.py")

    if not os.path.exists(module_path):
        raise FileNotFoundError(f"Module {module_name} not found in {directory}")

    if directory not in sys.path:
        sys.path.insert(0, directory)

    return importlib.import_module(module_name)
