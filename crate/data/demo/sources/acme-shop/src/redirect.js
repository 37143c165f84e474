const express = require('express');

const router = express.Router();

router.get('/continue', (req, res) => {
  const target = req.query.next;
  if (target) {
    res.redirect(target);
  } else {
    res.redirect('/');
  }
});

router.get('/help', (req, res) => {
  res.redirect('/docs/help');
});

module.exports = router;
