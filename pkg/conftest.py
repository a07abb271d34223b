""" pytest wiring: configure Django the way manage.py does before tests are collected """
import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "prismlab.settings")
django.setup()
