# -*- coding: utf-8 -*-
#
# Sphinx configuration for the translit and tensorgrad documentation.

# -- Path setup --------------------------------------------------------------

# autodoc imports both packages straight from the repository checkout.
import os
import sys
sys.path.insert(0, os.path.abspath('../../tensorgrad'))
sys.path.insert(0, os.path.abspath('../../translit'))


# -- Project information -----------------------------------------------------

project = 'translit'
copyright = '2026, translit developers'
author = 'translit developers'
version = '1.0'
release = '1.0.0'


# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.doctest'
]

autodoc_member_order = 'bysource'

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = []

# Do not convert quotes and dashes, especially for double dashes in commands
smartquotes = False


# -- Options for HTML output -------------------------------------------------

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'translitdoc'


# -- Options for other builders ----------------------------------------------

latex_documents = [
    (master_doc, 'translit.tex', 'translit Documentation', author, 'manual'),
]

man_pages = [
    (master_doc, 'translit', 'translit command-line toolkit', [author], 1)
]
