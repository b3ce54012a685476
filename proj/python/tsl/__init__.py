from ._tsl import *  # noqa: F401,F403
