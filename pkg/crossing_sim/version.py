"""
Version management for the crossing model stack
"""

import logging
import platform
import sys
from pathlib import Path
from typing import Dict, Optional

import psutil

logger = logging.getLogger(__name__)

BASE_DIR = Path(__file__).resolve().parent.parent


def get_version() -> str:
    """Get application version from VERSION file"""
    try:
        version_file = BASE_DIR / "VERSION"
        if version_file.exists():
            return version_file.read_text().strip()
        return "Unknown"
    except OSError:
        return "Unknown"


def get_git_info() -> Optional[Dict[str, str]]:
    """Get git commit information"""
    try:
        import git

        repo = git.Repo(BASE_DIR, search_parent_directories=True)
        return {
            "describe": repo.git.describe("--tags", "--always", "--dirty"),
            "commit_hash": repo.head.commit.hexsha[:7],
            "branch": (
                "detached" if repo.head.is_detached else repo.active_branch.name
            ),
            "commit_date": repo.head.commit.committed_datetime.date().isoformat(),
        }
    except Exception as e:
        logger.debug(f"No git metadata available: {e}")
        return None


def get_build_info() -> Dict[str, object]:
    """Get build information"""
    import django
    import numpy
    import scipy
    import sklearn
    import torch

    build_info = {
        "version": get_version(),
        "python_version": f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}",
        "django_version": django.get_version(),
        "numpy_version": numpy.__version__,
        "scipy_version": scipy.__version__,
        "sklearn_version": sklearn.__version__,
        "torch_version": torch.__version__,
        "platform": platform.system(),
        "architecture": platform.machine(),
        "physical_cores": psutil.cpu_count(logical=False),
    }

    git_info = get_git_info()
    if git_info:
        build_info.update(git_info)

    return build_info


def get_version_display() -> str:
    """Get formatted version string, git-describe style when available"""
    version = get_version()
    git_info = get_git_info()

    if git_info and git_info.get("describe"):
        return f"{version} ({git_info['describe']})"

    return version
