import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def env_var(name: str, default: Optional[str] = None) -> Optional[str]:
    """Reads an M3ET_* setting from the environment (a .env file is honoured), falling back to the default"""
    value = os.environ.get(name)
    if value is None or value.strip() == '':
        return default
    return value.strip()
