# Core models and closed forms
