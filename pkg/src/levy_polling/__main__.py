#!/usr/bin/env python3
"""
Entry point for levy_polling module when run as python -m levy_polling
"""

from .cli import main

if __name__ == '__main__':
    main()
